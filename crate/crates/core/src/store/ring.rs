use std::collections::BTreeSet;

use crate::hash::StableHasher;

use super::{ShardId, StoreError};

pub const DEFAULT_VNODES: u32 = 128;

/// Consistent-hash ring. Each member owns `vnodes` positions; a key belongs to
/// the member at the first position at or after the key's hash, wrapping.
#[derive(Debug, Clone)]
pub struct HashRing {
    vnodes: u32,
    seed: u64,
    /// Sorted by (position, member).
    positions: Vec<(u64, ShardId)>,
    members: BTreeSet<ShardId>,
}

impl HashRing {
    pub fn new(vnodes: u32, seed: u64) -> Self {
        HashRing { vnodes: vnodes.max(1), seed, positions: Vec::new(), members: BTreeSet::new() }
    }

    pub fn vnodes(&self) -> u32 {
        self.vnodes
    }

    pub fn members(&self) -> impl Iterator<Item = ShardId> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, member: ShardId) -> bool {
        self.members.contains(&member)
    }

    pub fn vnode_position(&self, member: ShardId, i: u32) -> u64 {
        StableHasher::new(self.seed).str("vnode").u64(member.0 as u64).u64(i as u64).finish()
    }

    pub fn key_hash(&self, key: u64) -> u64 {
        StableHasher::new(self.seed).str("key").u64(key).finish()
    }

    pub fn insert(&mut self, member: ShardId) -> Result<(), StoreError> {
        if !self.members.insert(member) {
            return Err(StoreError::DuplicateMember(member));
        }
        for i in 0..self.vnodes {
            let entry = (self.vnode_position(member, i), member);
            let at = self.positions.binary_search(&entry).unwrap_or_else(|e| e);
            self.positions.insert(at, entry);
        }
        Ok(())
    }

    pub fn remove(&mut self, member: ShardId) -> Result<(), StoreError> {
        if !self.members.remove(&member) {
            return Err(StoreError::UnknownMember(member));
        }
        self.positions.retain(|&(_, m)| m != member);
        Ok(())
    }

    fn first_at_or_after(&self, hash: u64) -> usize {
        let i = self.positions.partition_point(|&(p, _)| p < hash);
        if i == self.positions.len() {
            0
        } else {
            i
        }
    }

    /// Owner of a pre-hashed ring position.
    pub fn owner_of_hash(&self, hash: u64) -> Option<ShardId> {
        if self.positions.is_empty() {
            return None;
        }
        Some(self.positions[self.first_at_or_after(hash)].1)
    }

    pub fn lookup(&self, key: u64) -> Option<ShardId> {
        self.owner_of_hash(self.key_hash(key))
    }

    /// First `n` distinct members clockwise from the key's position.
    pub fn successors(&self, key: u64, n: usize) -> Result<Vec<ShardId>, StoreError> {
        if n == 0 || n > self.members.len() {
            return Err(StoreError::InsufficientMembers { requested: n, available: self.members.len() });
        }
        let start = self.first_at_or_after(self.key_hash(key));
        let mut out = Vec::with_capacity(n);
        for k in 0..self.positions.len() {
            let m = self.positions[(start + k) % self.positions.len()].1;
            if !out.contains(&m) {
                out.push(m);
                if out.len() == n {
                    break;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn ring(members: u32) -> HashRing {
        let mut r = HashRing::new(DEFAULT_VNODES, 11);
        for m in 0..members {
            r.insert(ShardId(m)).unwrap();
        }
        r
    }

    #[test]
    fn single_member_owns_everything() {
        let r = ring(1);
        assert!((0..1000).all(|k| r.lookup(k) == Some(ShardId(0))));
    }

    #[test]
    fn duplicate_and_unknown_members() {
        let mut r = ring(2);
        assert_eq!(r.insert(ShardId(1)), Err(StoreError::DuplicateMember(ShardId(1))));
        assert_eq!(r.remove(ShardId(9)), Err(StoreError::UnknownMember(ShardId(9))));
    }

    #[test]
    fn balance_with_four_members() {
        let r = ring(4);
        let mut counts = BTreeMap::new();
        for k in 0..10_000u64 {
            *counts.entry(r.lookup(k).unwrap()).or_insert(0u32) += 1;
        }
        for (m, c) in counts {
            let share = c as f64 / 10_000.0;
            assert!((share - 0.25).abs() <= 0.05, "{m:?} owns {share}");
        }
    }

    #[test]
    fn successors_are_distinct_and_start_at_owner() {
        let r = ring(5);
        for k in 0..200 {
            let s = r.successors(k, 3).unwrap();
            assert_eq!(s[0], r.lookup(k).unwrap());
            assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 3);
        }
        assert!(matches!(r.successors(0, 6), Err(StoreError::InsufficientMembers { .. })));
    }
}
