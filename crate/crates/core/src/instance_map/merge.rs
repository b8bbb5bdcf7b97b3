//! Co-voting analysis over vote records.

use std::collections::BTreeMap;

use super::VoteRecord;

fn find(parent: &mut BTreeMap<u32, u32>, x: u32) -> u32 {
    let mut root = x;
    while let Some(&p) = parent.get(&root) {
        if p == root {
            break;
        }
        root = p;
    }
    let mut cur = x;
    while cur != root {
        let next = parent[&cur];
        parent.insert(cur, root);
        cur = next;
    }
    root
}

/// Merge mapping (absorbed id → surviving id) from the co-voting counts.
///
/// Two instances co-vote in a record when both received more votes than the
/// record's association threshold. Pairs with more than `theta_merge` co-votes are
/// unioned, the smaller id surviving. Since merged votes are summed, new pairs can
/// appear after a round; rounds repeat until none do, which makes a second call on
/// the remapped history a no-op.
pub fn plan_merges<'a>(
    history: impl Iterator<Item = &'a VoteRecord>,
    theta_merge: u32,
) -> BTreeMap<u32, u32> {
    let records: Vec<&VoteRecord> = history.collect();
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    loop {
        let mut pairs: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for rec in &records {
            let mut summed: BTreeMap<u32, u32> = BTreeMap::new();
            for &(id, n) in &rec.votes {
                *summed.entry(find(&mut parent, id)).or_default() += n;
            }
            let strong: Vec<u32> = summed
                .into_iter()
                .filter(|&(_, n)| n as f64 > rec.threshold)
                .map(|(id, _)| id)
                .collect();
            for (i, &a) in strong.iter().enumerate() {
                for &b in &strong[i + 1..] {
                    *pairs.entry((a, b)).or_default() += 1;
                }
            }
        }
        let mut changed = false;
        for ((a, b), count) in pairs {
            if count <= theta_merge {
                continue;
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                let (lo, hi) = (ra.min(rb), ra.max(rb));
                parent.insert(hi, lo);
                parent.entry(lo).or_insert(lo);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let ids: Vec<u32> = parent.keys().copied().collect();
    ids.into_iter()
        .filter_map(|id| {
            let root = find(&mut parent, id);
            (root != id).then_some((id, root))
        })
        .collect()
}
