use std::collections::{BTreeMap, VecDeque};
use std::io;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::{Location, NetworkModel, SimRng, SimTime, Tier};

use super::{place, HashRing, ObjectId, ReplicaSet, ShardId, StoreError, DEFAULT_VNODES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub replicas: usize,
    pub vnodes: u32,
    #[serde(with = "crate::sim::serde_secs")]
    pub election_window: Duration,
    pub persistent: bool,
    pub hash_seed: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { replicas: 1, vnodes: DEFAULT_VNODES, election_window: Duration::from_secs(1), persistent: true, hash_seed: 0 }
    }
}

/// Unstructured data: only its size and a content digest are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub size: u64,
    pub digest: u64,
}

/// Snapshot of an object as the primary holds it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectRecord {
    pub object_id: ObjectId,
    pub class_name: String,
    pub attributes: Value,
    pub blobs: BTreeMap<String, BlobRef>,
    pub revision: u64,
    pub replica_set: ReplicaSet,
}

#[derive(Debug, Clone)]
pub struct ReadView {
    pub revision: u64,
    pub attributes: Arc<Value>,
    pub served_by: ShardId,
    pub tier: Tier,
    pub delay: Duration,
}

/// Replica-level happenings, collected for the event trace when enabled.
#[derive(Debug, Clone, PartialEq)]
pub enum StoreEvent {
    Elected { object: ObjectId, from: ShardId, to: ShardId, at: SimTime },
    BackFilled { object: ObjectId, shard: ShardId, revision: u64, from_backing: bool, at: SimTime },
    Lost { object: ObjectId, at: SimTime },
}

#[derive(Debug, Clone)]
struct Shard {
    location: Location,
    /// Bumped on every kill; replica copies from an older epoch are gone.
    epoch: u32,
    up: bool,
    up_since: SimTime,
    down_since: SimTime,
}

const NO_EPOCH: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Copy {
    member: ShardId,
    epoch: u32,
    revision: u64,
    attributes: Arc<Value>,
    /// In-flight propagations: (arrival, revision, state).
    pending: VecDeque<(SimTime, u64, Arc<Value>)>,
}

impl Copy {
    fn apply_due(&mut self, now: SimTime) {
        while let Some(&(at, rev, _)) = self.pending.front() {
            if at > now {
                break;
            }
            let (_, _, attrs) = self.pending.pop_front().expect("peeked");
            if rev > self.revision {
                self.revision = rev;
                self.attributes = attrs;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    class: Arc<str>,
    blobs: BTreeMap<String, BlobRef>,
    blob_bytes: u64,
    attr_bytes: u64,
    revision: u64,
    replica_set: ReplicaSet,
    /// Parallel to `replica_set.members`.
    copies: Vec<Copy>,
    backing: Option<(u64, Arc<Value>)>,
    lost: bool,
}

struct ByteCounter(u64);

impl io::Write for ByteCounter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Serialized size of a document.
pub fn document_bytes(v: &Value) -> u64 {
    let mut c = ByteCounter(0);
    serde_json::to_writer(&mut c, v).expect("writing to a counter cannot fail");
    c.0
}

/// One class runtime's replicated state.
pub struct ObjectStore {
    config: StoreConfig,
    ring: HashRing,
    shards: Vec<Shard>,
    objects: Vec<Entry>,
    network: NetworkModel,
    rng: SimRng,
    events: Option<Vec<StoreEvent>>,
}

impl ObjectStore {
    pub fn new(config: StoreConfig, network: NetworkModel, rng: SimRng) -> Self {
        let ring = HashRing::new(config.vnodes, config.hash_seed);
        ObjectStore { config, ring, shards: Vec::new(), objects: Vec::new(), network, rng, events: None }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn ring(&self) -> &HashRing {
        &self.ring
    }

    pub fn record_events(&mut self, on: bool) {
        self.events = on.then(Vec::new);
    }

    pub fn drain_events(&mut self) -> Vec<StoreEvent> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn emit(&mut self, e: StoreEvent) {
        if let Some(log) = &mut self.events {
            log.push(e);
        }
    }

    /// Registers a shard as up and joins it to the ring.
    pub fn add_shard(&mut self, location: Location, now: SimTime) -> ShardId {
        let id = ShardId(self.shards.len() as u32);
        self.shards.push(Shard { location, epoch: 0, up: true, up_since: now, down_since: SimTime::ZERO });
        self.ring.insert(id).expect("fresh shard id");
        id
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_location(&self, shard: ShardId) -> Location {
        self.shards[shard.0 as usize].location
    }

    pub fn shard_epoch(&self, shard: ShardId) -> u32 {
        self.shards[shard.0 as usize].epoch
    }

    pub fn shard_up(&self, shard: ShardId) -> bool {
        self.shards[shard.0 as usize].up
    }

    /// The shard's container died: its in-memory copies are gone.
    pub fn shard_killed(&mut self, shard: ShardId, now: SimTime) {
        let s = &mut self.shards[shard.0 as usize];
        s.epoch += 1;
        s.up = false;
        s.down_since = now;
    }

    /// The shard's container is warm again; its copies back-fill lazily.
    pub fn shard_recovered(&mut self, shard: ShardId, now: SimTime) {
        let s = &mut self.shards[shard.0 as usize];
        s.up = true;
        s.up_since = now;
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object_ids(&self) -> impl Iterator<Item = ObjectId> {
        (0..self.objects.len() as u64).map(ObjectId)
    }

    fn entry(&self, id: ObjectId) -> Result<&Entry, StoreError> {
        self.objects.get(id.0 as usize).ok_or(StoreError::NotFound(id))
    }

    pub fn create(
        &mut self,
        class: &str,
        attributes: Value,
        blobs: BTreeMap<String, BlobRef>,
        now: SimTime,
    ) -> Result<ObjectId, StoreError> {
        let id = ObjectId(self.objects.len() as u64);
        let replica_set = place(&self.ring, id, self.config.replicas)?;
        let attr_bytes = document_bytes(&attributes);
        let attributes = Arc::new(attributes);
        let copies = replica_set
            .members
            .iter()
            .map(|&m| {
                let s = &self.shards[m.0 as usize];
                Copy { member: m, epoch: if s.up { s.epoch } else { NO_EPOCH }, revision: 0, attributes: attributes.clone(), pending: VecDeque::new() }
            })
            .collect();
        let blob_bytes = blobs.values().map(|b| b.size).sum();
        self.objects.push(Entry {
            class: Arc::from(class),
            blobs,
            blob_bytes,
            attr_bytes,
            revision: 0,
            replica_set,
            copies,
            backing: self.config.persistent.then(|| (0, attributes)),
            lost: false,
        });
        let _ = now;
        Ok(id)
    }

    fn backfill_time(&self, e: &Entry) -> Duration {
        self.network.transfer(e.attr_bytes + e.blob_bytes)
    }

    /// Brings copy `i` of `id` up to date if its shard is up but the copy
    /// predates the last kill, and the back-fill transfer has finished.
    fn refresh_copy(&mut self, id: ObjectId, i: usize, now: SimTime) -> bool {
        let bf = self.backfill_time(&self.objects[id.0 as usize]);
        let e = &self.objects[id.0 as usize];
        let shard = &self.shards[e.copies[i].member.0 as usize];
        if !shard.up {
            return false;
        }
        if e.copies[i].epoch == shard.epoch {
            self.objects[id.0 as usize].copies[i].apply_due(now);
            return true;
        }
        if now < shard.up_since + bf {
            return false;
        }
        let epoch = shard.epoch;
        // Source: the freshest copy that survived, else the durable backing.
        let mut best: Option<(u64, Arc<Value>)> = None;
        for j in 0..e.copies.len() {
            if j == i {
                continue;
            }
            let c = &e.copies[j];
            let s = &self.shards[c.member.0 as usize];
            if s.up && c.epoch == s.epoch {
                let mut c = c.clone();
                c.apply_due(now);
                if best.as_ref().is_none_or(|(r, _)| c.revision > *r) {
                    best = Some((c.revision, c.attributes));
                }
            }
        }
        let from_backing = best.is_none();
        let Some((revision, attributes)) = best.or_else(|| e.backing.clone()) else {
            return false;
        };
        let member = e.copies[i].member;
        let c = &mut self.objects[id.0 as usize].copies[i];
        c.epoch = epoch;
        c.revision = revision;
        c.attributes = attributes;
        c.pending.clear();
        self.emit(StoreEvent::BackFilled { object: id, shard: member, revision, from_backing, at: now });
        true
    }

    fn is_live(&mut self, id: ObjectId, i: usize, now: SimTime) -> bool {
        self.refresh_copy(id, i, now)
    }

    /// Current primary, running any election that is due.
    pub fn primary(&mut self, id: ObjectId, now: SimTime) -> Result<ShardId, StoreError> {
        let e = self.entry(id)?;
        if e.lost {
            return Err(StoreError::ObjectLost(id));
        }
        let pi = e.replica_set.primary_index;
        let p = e.replica_set.primary();
        if self.is_live(id, pi, now) {
            return Ok(p);
        }
        let down_since = self.shards[p.0 as usize].down_since;
        if now < down_since + self.config.election_window {
            return Err(StoreError::NoPrimary(id));
        }
        let order: Vec<usize> = self.objects[id.0 as usize].replica_set.succession().map(|(i, _)| i).collect();
        for i in order {
            if i != pi && self.is_live(id, i, now) {
                let e = &mut self.objects[id.0 as usize];
                e.replica_set.primary_index = i;
                let to = e.replica_set.primary();
                self.emit(StoreEvent::Elected { object: id, from: p, to, at: now });
                return Ok(to);
            }
        }
        let e = &self.objects[id.0 as usize];
        let survivors = e.copies.iter().any(|c| {
            let s = &self.shards[c.member.0 as usize];
            c.epoch == s.epoch
        });
        if !survivors && e.backing.is_none() {
            self.objects[id.0 as usize].lost = true;
            self.emit(StoreEvent::Lost { object: id, at: now });
            return Err(StoreError::ObjectLost(id));
        }
        Err(StoreError::AllReplicasDown(id))
    }

    /// Reads from a live replica on the caller's node, else from the primary.
    pub fn read(&mut self, id: ObjectId, caller: Location, now: SimTime) -> Result<ReadView, StoreError> {
        let e = self.entry(id)?;
        let local: Vec<usize> = (0..e.copies.len())
            .filter(|&i| self.shards[e.copies[i].member.0 as usize].location.node == caller.node)
            .collect();
        for i in local {
            if self.is_live(id, i, now) {
                let c = &self.objects[id.0 as usize].copies[i];
                let delay = self.network.local.mean();
                return Ok(ReadView { revision: c.revision, attributes: c.attributes.clone(), served_by: c.member, tier: Tier::Local, delay });
            }
        }
        let p = self.primary(id, now)?;
        let e = &self.objects[id.0 as usize];
        let c = &e.copies[e.replica_set.primary_index];
        let src = self.shards[p.0 as usize].location;
        let tier = self.network.tier(src, caller).unwrap_or(Tier::Internet);
        let delay = self.network.tier_delay(tier, e.attr_bytes, &mut self.rng);
        Ok(ReadView { revision: c.revision, attributes: c.attributes.clone(), served_by: p, tier, delay })
    }

    /// Compare-and-set write at the primary. Followers receive the new state
    /// after one network delay each.
    pub fn commit(&mut self, id: ObjectId, attributes: Value, expected_revision: u64, now: SimTime) -> Result<u64, StoreError> {
        let p = self.primary(id, now)?;
        let e = &self.objects[id.0 as usize];
        let actual = e.copies[e.replica_set.primary_index].revision;
        if actual != expected_revision {
            return Err(StoreError::StaleRevision { object: id, expected: expected_revision, actual });
        }
        let attr_bytes = document_bytes(&attributes);
        let attributes = Arc::new(attributes);
        let revision = actual + 1;
        let src = self.shards[p.0 as usize].location;
        let n = e.copies.len();
        let pi = e.replica_set.primary_index;
        for i in 0..n {
            let member = self.objects[id.0 as usize].copies[i].member;
            let shard = &self.shards[member.0 as usize];
            let (dst, epoch, up) = (shard.location, shard.epoch, shard.up);
            let c = &mut self.objects[id.0 as usize].copies[i];
            if i == pi {
                c.revision = revision;
                c.attributes = attributes.clone();
            } else if up && c.epoch == epoch {
                let tier = self.network.tier(src, dst).unwrap_or(Tier::Internet);
                let delay = self.network.tier_delay(tier, attr_bytes, &mut self.rng);
                c.pending.push_back((now + delay, revision, attributes.clone()));
            }
        }
        let e = &mut self.objects[id.0 as usize];
        e.revision = revision;
        e.attr_bytes = attr_bytes;
        if let Some(b) = &mut e.backing {
            *b = (revision, attributes);
        }
        Ok(revision)
    }

    /// Per-member (shard, revision) as of `now`; `None` for copies that are
    /// down or still back-filling.
    pub fn replica_revisions(&mut self, id: ObjectId, now: SimTime) -> Result<Vec<(ShardId, Option<u64>)>, StoreError> {
        let n = self.entry(id)?.copies.len();
        Ok((0..n)
            .map(|i| {
                let live = self.is_live(id, i, now);
                let c = &self.objects[id.0 as usize].copies[i];
                (c.member, live.then_some(c.revision))
            })
            .collect())
    }

    /// Revision held by the primary copy (committed writes).
    pub fn revision(&self, id: ObjectId) -> Result<u64, StoreError> {
        Ok(self.entry(id)?.revision)
    }

    pub fn replica_set(&self, id: ObjectId) -> Result<&ReplicaSet, StoreError> {
        Ok(&self.entry(id)?.replica_set)
    }

    pub fn attribute_bytes(&self, id: ObjectId) -> Result<u64, StoreError> {
        Ok(self.entry(id)?.attr_bytes)
    }

    pub fn class_of(&self, id: ObjectId) -> Result<&str, StoreError> {
        Ok(&self.entry(id)?.class)
    }

    /// Primary-side snapshot, without running elections.
    pub fn record(&self, id: ObjectId) -> Result<ObjectRecord, StoreError> {
        let e = self.entry(id)?;
        let c = &e.copies[e.replica_set.primary_index];
        Ok(ObjectRecord {
            object_id: id,
            class_name: e.class.to_string(),
            attributes: e.backing.as_ref().filter(|(r, _)| *r > c.revision).map_or_else(|| (*c.attributes).clone(), |(_, a)| (**a).clone()),
            blobs: e.blobs.clone(),
            revision: e.revision,
            replica_set: e.replica_set.clone(),
        })
    }

    /// Latest committed state of the object, wherever it survives.
    pub fn committed_attributes(&self, id: ObjectId) -> Result<Arc<Value>, StoreError> {
        let e = self.entry(id)?;
        if let Some((r, a)) = &e.backing {
            if *r == e.revision {
                return Ok(a.clone());
            }
        }
        Ok(e.copies[e.replica_set.primary_index].attributes.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{NodeId, RandomSource, SiteId};
    use serde_json::json;

    fn loc(node: u32) -> Location {
        Location { node: NodeId(node), site: SiteId(0) }
    }

    fn store(shards: u32, replicas: usize, persistent: bool) -> ObjectStore {
        let cfg = StoreConfig { replicas, persistent, ..Default::default() };
        let mut s = ObjectStore::new(cfg, NetworkModel::default(), RandomSource::new(1).stream("store", 0));
        for n in 0..shards {
            s.add_shard(loc(n), SimTime::ZERO);
        }
        s
    }

    fn t(ms: u64) -> SimTime {
        SimTime::from_nanos(ms * 1_000_000)
    }

    #[test]
    fn commit_increments_and_cas() {
        let mut s = store(3, 3, true);
        let o = s.create("C", json!({"k": 0}), BTreeMap::new(), SimTime::ZERO).unwrap();
        assert_eq!(s.commit(o, json!({"k": 1}), 0, t(1)).unwrap(), 1);
        let err = s.commit(o, json!({"k": 2}), 0, t(1)).unwrap_err();
        assert!(matches!(err, StoreError::StaleRevision { expected: 0, actual: 1, .. }));
    }

    #[test]
    fn quiesced_reads_agree() {
        let mut s = store(3, 3, true);
        let o = s.create("C", json!({"k": 0}), BTreeMap::new(), SimTime::ZERO).unwrap();
        for r in 0..7 {
            s.commit(o, json!({"k": r + 1}), r, t(r + 1)).unwrap();
        }
        for n in 0..3 {
            let v = s.read(o, loc(n), t(100)).unwrap();
            assert_eq!(v.revision, 7);
            assert_eq!(v.tier, Tier::Local);
        }
    }

    #[test]
    fn follower_lags_during_propagation() {
        let mut s = store(2, 2, true);
        let o = s.create("C", json!({}), BTreeMap::new(), SimTime::ZERO).unwrap();
        for r in 0..6 {
            s.commit(o, json!({"r": r + 1}), r, t(r + 1)).unwrap();
        }
        let now = t(10);
        s.commit(o, json!({"r": 7}), 6, now).unwrap();
        let follower = s.replica_set(o).unwrap().members[1];
        let f_loc = s.shard_location(follower);
        let v = s.read(o, f_loc, now).unwrap();
        assert_eq!(v.revision, 6);
        assert_eq!(s.revision(o).unwrap(), 7);
        let later = s.read(o, f_loc, now + Duration::from_millis(1)).unwrap();
        assert_eq!(later.revision, 7);
    }

    #[test]
    fn propagation_bounded_by_max_delay() {
        let mut s = store(3, 3, true);
        let o = s.create("C", json!({"a": 1}), BTreeMap::new(), SimTime::ZERO).unwrap();
        let now = t(5);
        s.commit(o, json!({"a": 2}), 0, now).unwrap();
        let bytes = s.attribute_bytes(o).unwrap();
        let max = NetworkModel::default().datacenter.mean() + NetworkModel::default().transfer(bytes);
        let revs = s.replica_revisions(o, now + max).unwrap();
        assert!(revs.iter().all(|(_, r)| *r == Some(1)), "{revs:?}");
    }

    #[test]
    fn primary_failover_after_election_window() {
        let mut s = store(3, 3, true);
        let o = s.create("C", json!({}), BTreeMap::new(), SimTime::ZERO).unwrap();
        let rs = s.replica_set(o).unwrap().clone();
        s.shard_killed(rs.members[0], t(1000));
        assert_eq!(s.primary(o, t(1500)), Err(StoreError::NoPrimary(o)));
        assert!(matches!(s.commit(o, json!({}), 0, t(1500)), Err(StoreError::NoPrimary(_))));
        assert_eq!(s.primary(o, t(2000)).unwrap(), rs.members[1]);
        assert_eq!(s.commit(o, json!({"x": 1}), 0, t(2001)).unwrap(), 1);
    }

    #[test]
    fn follower_failure_keeps_primary_and_backfills() {
        let mut s = store(3, 3, true);
        let o = s.create("C", json!({}), BTreeMap::new(), SimTime::ZERO).unwrap();
        let rs = s.replica_set(o).unwrap().clone();
        s.shard_killed(rs.members[2], t(10));
        assert_eq!(s.primary(o, t(11)).unwrap(), rs.members[0]);
        s.commit(o, json!({"v": 1}), 0, t(12)).unwrap();
        s.shard_recovered(rs.members[2], t(20));
        let revs = s.replica_revisions(o, t(21)).unwrap();
        assert_eq!(revs[2], (rs.members[2], Some(1)));
    }

    #[test]
    fn both_replicas_down_until_first_recovery() {
        let mut s = store(2, 2, true);
        let o = s.create("C", json!({"v": 0}), BTreeMap::new(), SimTime::ZERO).unwrap();
        s.commit(o, json!({"v": 1}), 0, t(1)).unwrap();
        let rs = s.replica_set(o).unwrap().clone();
        s.shard_killed(rs.members[0], t(100));
        s.shard_killed(rs.members[1], t(200));
        assert_eq!(s.primary(o, t(5000)), Err(StoreError::AllReplicasDown(o)));
        assert!(s.read(o, loc(9), t(5000)).is_err());
        s.shard_recovered(rs.members[1], t(10_000));
        assert_eq!(s.primary(o, t(10_001)).unwrap(), rs.members[1]);
        assert_eq!(s.read(o, loc(9), t(10_001)).unwrap().revision, 1);
    }

    #[test]
    fn non_persistent_object_lost_with_last_replica() {
        let mut s = store(2, 2, false);
        let o = s.create("C", json!({}), BTreeMap::new(), SimTime::ZERO).unwrap();
        for m in s.replica_set(o).unwrap().members.clone() {
            s.shard_killed(m, t(1));
            s.shard_recovered(m, t(2));
        }
        assert_eq!(s.primary(o, t(5000)), Err(StoreError::ObjectLost(o)));
    }

    #[test]
    fn unknown_object() {
        let mut s = store(1, 1, true);
        assert_eq!(s.primary(ObjectId(4), SimTime::ZERO), Err(StoreError::NotFound(ObjectId(4))));
    }
}
