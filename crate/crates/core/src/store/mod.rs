//! In-memory replicated object store: consistent-hash placement over invoker
//! shards, a single writing primary per object, lazy follower propagation,
//! failover and back-fill.

mod object;
pub mod ring;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use object::{document_bytes, BlobRef, ObjectRecord, ObjectStore, ReadView, StoreConfig, StoreEvent};
pub use ring::{HashRing, DEFAULT_VNODES};

/// A ring member: one invoker shard, which also holds replicas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShardId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId(pub u64);

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("{0} is already on the ring")]
    DuplicateMember(ShardId),
    #[error("{0} is not on the ring")]
    UnknownMember(ShardId),
    #[error("{requested} replicas requested but the ring has {available} members")]
    InsufficientMembers { requested: usize, available: usize },
    #[error("object {0} not found")]
    NotFound(ObjectId),
    #[error("object {0} has no primary during failover")]
    NoPrimary(ObjectId),
    #[error("all replicas of object {0} are down")]
    AllReplicasDown(ObjectId),
    #[error("object {0} was lost with its last replica")]
    ObjectLost(ObjectId),
    #[error("stale revision for {object}: expected {expected}, primary holds {actual}")]
    StaleRevision { object: ObjectId, expected: u64, actual: u64 },
    #[error("{member} is not a replica of {object}")]
    NotAMember { object: ObjectId, member: ShardId },
}

/// Replica placement of one object. `members[primary_index]` is the primary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaSet {
    pub object_id: ObjectId,
    pub members: Vec<ShardId>,
    pub primary_index: usize,
}

impl ReplicaSet {
    pub fn primary(&self) -> ShardId {
        self.members[self.primary_index]
    }

    pub fn followers(&self) -> impl Iterator<Item = ShardId> + '_ {
        let p = self.primary();
        self.members.iter().copied().filter(move |&m| m != p)
    }

    /// Members in succession order starting after the primary.
    pub fn succession(&self) -> impl Iterator<Item = (usize, ShardId)> + '_ {
        let n = self.members.len();
        (1..=n).map(move |k| {
            let i = (self.primary_index + k) % n;
            (i, self.members[i])
        })
    }

    /// Replica set after `failed` goes down. A failed primary hands over to
    /// the next live member in order; a failed follower changes nothing.
    pub fn failover(&self, failed: ShardId, is_live: impl Fn(ShardId) -> bool) -> Result<ReplicaSet, StoreError> {
        if !self.members.contains(&failed) {
            return Err(StoreError::NotAMember { object: self.object_id, member: failed });
        }
        if self.primary() != failed {
            return if self.members.iter().any(|&m| m != failed && is_live(m)) || is_live(self.primary()) {
                Ok(self.clone())
            } else {
                Err(StoreError::AllReplicasDown(self.object_id))
            };
        }
        self.succession()
            .find(|&(_, m)| m != failed && is_live(m))
            .map(|(i, _)| ReplicaSet { primary_index: i, ..self.clone() })
            .ok_or(StoreError::AllReplicasDown(self.object_id))
    }
}

/// Places `n` replicas on the first distinct members clockwise from the
/// object's ring position; the first is the primary.
pub fn place(ring: &HashRing, object_id: ObjectId, n: usize) -> Result<ReplicaSet, StoreError> {
    Ok(ReplicaSet { object_id, members: ring.successors(object_id.0, n)?, primary_index: 0 })
}
