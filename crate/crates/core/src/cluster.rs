//! Address clustering by input co-spending, with an optional conservative
//! change-address rule.

use std::io::Write;

use crate::chain::{AddressId, Chain};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterId(pub u32);

impl ClusterId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Returns true when the two sets were distinct.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }
}

/// Partition of a chain's addresses into clusters.
///
/// Cluster ids are dense and ordered by the first-seen position of each
/// cluster's earliest address, so they are stable across input orderings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    of: Vec<ClusterId>,
    members: Vec<Vec<AddressId>>,
    received: Vec<u64>,
}

impl ClusterAssignment {
    fn from_forest(chain: &Chain, mut uf: UnionFind) -> Self {
        let n = chain.address_count();
        let mut root_to_id: Vec<Option<ClusterId>> = vec![None; n];
        let mut of = Vec::with_capacity(n);
        let mut members: Vec<Vec<AddressId>> = Vec::new();
        // Address ids are first-seen order, so the first member reached
        // for each root is its smallest.
        for a in 0..n as u32 {
            let root = uf.find(a) as usize;
            let id = *root_to_id[root].get_or_insert_with(|| {
                members.push(Vec::new());
                ClusterId(members.len() as u32 - 1)
            });
            members[id.index()].push(AddressId(a));
            of.push(id);
        }
        let received = members
            .iter()
            .map(|m| m.iter().map(|a| chain.received_sat(*a)).sum())
            .collect();
        ClusterAssignment { of, members, received }
    }

    pub fn cluster_count(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_of_id(&self, addr: AddressId) -> ClusterId {
        self.of[addr.index()]
    }

    /// Cluster of `address`, or `None` when the address was never observed.
    pub fn cluster_of(&self, chain: &Chain, address: &str) -> Option<ClusterId> {
        chain.address_id(address).map(|a| self.cluster_of_id(a))
    }

    pub fn members(&self, id: ClusterId) -> &[AddressId] {
        &self.members[id.index()]
    }

    pub fn member_count(&self, id: ClusterId) -> usize {
        self.members[id.index()].len()
    }

    pub fn received_sat(&self, id: ClusterId) -> u64 {
        self.received[id.index()]
    }

    pub fn clusters(&self) -> impl Iterator<Item = ClusterId> {
        (0..self.members.len() as u32).map(ClusterId)
    }

    /// `address,cluster_id` in address first-seen order.
    pub fn write_csv<W: Write>(&self, chain: &Chain, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["address", "cluster_id"])?;
        for a in chain.address_ids() {
            w.write_record([chain.address(a), &self.cluster_of_id(a).0.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<cluster csv>", e))?;
        Ok(())
    }
}

/// Union-find closure over input co-spending sets.
pub fn cluster_multi_input(chain: &Chain) -> ClusterAssignment {
    let mut uf = UnionFind::new(chain.address_count());
    co_spend(chain, &mut uf);
    ClusterAssignment::from_forest(chain, uf)
}

/// Multi-input clustering, plus (when `enabled`) merging of change outputs.
///
/// An output is treated as change when, in a transaction with at least two
/// distinct output addresses, it is the only output address appearing for
/// the first time in the chain and every other output address was seen
/// earlier. Addresses that also fund the transaction count as seen.
pub fn cluster_with_change(chain: &Chain, enabled: bool) -> ClusterAssignment {
    let mut uf = UnionFind::new(chain.address_count());
    co_spend(chain, &mut uf);
    if enabled {
        for (addr, spender) in change_outputs(chain) {
            uf.union(addr.0, spender.0);
        }
    }
    ClusterAssignment::from_forest(chain, uf)
}

fn co_spend(chain: &Chain, uf: &mut UnionFind) {
    for tx in chain.transactions() {
        let mut addrs = tx.inputs.iter().filter_map(|i| i.address);
        if let Some(first) = addrs.next() {
            for other in addrs {
                uf.union(first.0, other.0);
            }
        }
    }
}

/// (change address, one input address of the same transaction) pairs.
pub fn change_outputs(chain: &Chain) -> Vec<(AddressId, AddressId)> {
    let mut first_tx = vec![u32::MAX; chain.address_count()];
    for (t, tx) in chain.transactions().iter().enumerate() {
        let addrs = tx
            .inputs
            .iter()
            .filter_map(|i| i.address)
            .chain(tx.outputs.iter().map(|o| o.address));
        for a in addrs {
            let slot = &mut first_tx[a.index()];
            *slot = (*slot).min(t as u32);
        }
    }

    let mut pairs = Vec::new();
    for (t, tx) in chain.transactions().iter().enumerate() {
        let Some(spender) = tx.inputs.iter().find_map(|i| i.address) else {
            continue;
        };
        let mut outs: Vec<AddressId> = tx.outputs.iter().map(|o| o.address).collect();
        outs.sort_unstable();
        outs.dedup();
        if outs.len() < 2 {
            continue;
        }
        let is_input = |a: AddressId| tx.inputs.iter().any(|i| i.address == Some(a));
        let mut fresh = outs
            .iter()
            .copied()
            .filter(|a| first_tx[a.index()] == t as u32 && !is_input(*a));
        if let (Some(change), None) = (fresh.next(), fresh.next()) {
            pairs.push((change, spender));
        }
    }
    pairs
}
