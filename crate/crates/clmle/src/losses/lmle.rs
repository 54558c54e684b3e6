//! Quintuplet ordering loss: a triple-header hinge over the four distances
//! anchor -> {most distant within-cluster, nearest other-cluster same-class,
//! most distant same-class, nearest other-class} members, plus the sampling
//! of those roles from a clustered batch.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hypersphere::squared_distance;

use super::{lookup, BatchCluster, Embeddings, LossOutput};

/// The five roles of one ordering constraint. All of `anchor`, `p_plus`,
/// `p_minus`, `p_minus_minus` share a class; `n` has a different one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quintuplet {
    pub anchor: usize,
    pub p_plus: usize,
    pub p_minus: usize,
    pub p_minus_minus: usize,
    pub n: usize,
}

/// The three hinge margins between consecutive distances.
#[derive(Debug, Clone, Copy)]
pub struct LmleMargins {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl LmleMargins {
    pub fn new(g1: f64, g2: f64, g3: f64) -> Result<Self> {
        if !(g1 > 0.0 && g2 > 0.0 && g3 > 0.0) {
            return Err(Error::ConfigError(format!(
                "quintuplet margins must be positive, got ({g1}, {g2}, {g3})"
            )));
        }
        Ok(Self { g1, g2, g3 })
    }
}

/// Checks a quintuplet's role invariants against the batch cluster structure.
pub fn validate_quintuplet(q: &Quintuplet, clusters: &[BatchCluster]) -> Result<()> {
    let find = |id: usize| -> Result<&BatchCluster> {
        clusters
            .iter()
            .find(|c| c.members.contains(&id))
            .ok_or_else(|| Error::RoleViolation(format!("sample {id} not in any batch cluster")))
    };
    let anchor = find(q.anchor)?;
    let p_plus = find(q.p_plus)?;
    let p_minus = find(q.p_minus)?;
    let p_mm = find(q.p_minus_minus)?;
    let neg = find(q.n)?;
    if p_plus.cluster_id != anchor.cluster_id {
        return Err(Error::RoleViolation(
            "p+ must share the anchor's cluster".into(),
        ));
    }
    for (name, c) in [("p-", p_minus), ("p--", p_mm)] {
        if c.class != anchor.class {
            return Err(Error::RoleViolation(format!(
                "{name} must share the anchor's class"
            )));
        }
        if c.cluster_id == anchor.cluster_id {
            return Err(Error::RoleViolation(format!(
                "{name} must come from a different cluster than the anchor's"
            )));
        }
    }
    if neg.class == anchor.class {
        return Err(Error::RoleViolation(
            "n must come from a different class".into(),
        ));
    }
    Ok(())
}

/// Fills the quintuplet roles for one anchor by current embedding distance;
/// distance ties break toward the lowest sample id.
pub fn sample_quintuplet(
    clusters: &[BatchCluster],
    embeddings: &Embeddings,
    anchor: usize,
) -> Result<Quintuplet> {
    let own = clusters
        .iter()
        .find(|c| c.members.contains(&anchor))
        .ok_or(Error::InsufficientStructure {
            anchor,
            role: "anchor",
        })?;
    let anchor_emb = lookup(embeddings, anchor)?;
    let dist = |id: usize| -> Result<f64> {
        Ok(squared_distance(anchor_emb, lookup(embeddings, id)?))
    };

    // Most distant member of the anchor's own cluster.
    let p_plus = extreme_by(
        own.members.iter().copied().filter(|&m| m != anchor),
        &dist,
        Extreme::Farthest,
    )?
    .ok_or(Error::InsufficientStructure {
        anchor,
        role: "p+",
    })?;

    let same_class_other: Vec<usize> = clusters
        .iter()
        .filter(|c| c.class == own.class && c.cluster_id != own.cluster_id)
        .flat_map(|c| c.members.iter().copied())
        .collect();
    let p_minus = extreme_by(same_class_other.iter().copied(), &dist, Extreme::Nearest)?
        .ok_or(Error::InsufficientStructure {
            anchor,
            role: "p-",
        })?;
    let p_minus_minus =
        extreme_by(same_class_other.iter().copied(), &dist, Extreme::Farthest)?
            .ok_or(Error::InsufficientStructure {
                anchor,
                role: "p--",
            })?;

    let n = extreme_by(
        clusters
            .iter()
            .filter(|c| c.class != own.class)
            .flat_map(|c| c.members.iter().copied()),
        &dist,
        Extreme::Nearest,
    )?
    .ok_or(Error::InsufficientStructure { anchor, role: "n" })?;

    Ok(Quintuplet {
        anchor,
        p_plus,
        p_minus,
        p_minus_minus,
        n,
    })
}

/// Fills roles for every anchor, skipping anchors whose structure is
/// insufficient (single-cluster class, missing other class, singleton cluster).
pub fn sample_quintuplets(
    clusters: &[BatchCluster],
    embeddings: &Embeddings,
    anchors: &[usize],
) -> Vec<Quintuplet> {
    anchors
        .iter()
        .filter_map(|&a| sample_quintuplet(clusters, embeddings, a).ok())
        .collect()
}

enum Extreme {
    Nearest,
    Farthest,
}

fn extreme_by(
    candidates: impl Iterator<Item = usize>,
    dist: &impl Fn(usize) -> Result<f64>,
    mode: Extreme,
) -> Result<Option<usize>> {
    let mut best: Option<(f64, usize)> = None;
    for id in candidates {
        let d = dist(id)?;
        let better = match (&best, &mode) {
            (None, _) => true,
            (Some((bd, bid)), Extreme::Nearest) => d < *bd || (d == *bd && id < *bid),
            (Some((bd, bid)), Extreme::Farthest) => d > *bd || (d == *bd && id < *bid),
        };
        if better {
            best = Some((d, id));
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Mean triple-header hinge over the quintuplets, with exact subgradients.
/// Each quintuplet is validated against the batch structure first.
pub fn lmle_loss(
    embeddings: &Embeddings,
    quintuplets: &[Quintuplet],
    margins: LmleMargins,
    clusters: &[BatchCluster],
) -> Result<LossOutput> {
    if quintuplets.is_empty() {
        return Err(Error::EmptyQuintupletSet);
    }
    for q in quintuplets {
        validate_quintuplet(q, clusters)?;
    }
    let mut out = LossOutput::zeroed(embeddings);
    let scale = 1.0 / quintuplets.len() as f64;
    let mut anchor_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for q in quintuplets {
        let mut quint_total = 0.0;
        // The three hinges share the pattern [g + D(a, near) - D(a, far)]_+.
        let headers = [
            (q.p_plus, q.p_minus, margins.g1),
            (q.p_minus, q.p_minus_minus, margins.g2),
            (q.p_minus_minus, q.n, margins.g3),
        ];
        for (near, far, g) in headers {
            let a = lookup(embeddings, q.anchor)?;
            let near_emb = lookup(embeddings, near)?;
            let far_emb = lookup(embeddings, far)?;
            let hinge = g + squared_distance(a, near_emb) - squared_distance(a, far_emb);
            if hinge > 0.0 {
                quint_total += hinge;
                out.value += scale * hinge;
                let ga = out.grads.get_mut(&q.anchor).unwrap();
                for j in 0..a.len() {
                    ga[j] += scale * 2.0 * (far_emb[j] - near_emb[j]);
                }
                let gn = out.grads.get_mut(&near).unwrap();
                for j in 0..a.len() {
                    gn[j] += scale * -2.0 * (a[j] - near_emb[j]);
                }
                let gf = out.grads.get_mut(&far).unwrap();
                for j in 0..a.len() {
                    gf[j] += scale * 2.0 * (a[j] - far_emb[j]);
                }
            }
        }
        *anchor_counts.entry(q.anchor).or_insert(0) += 1;
        *out.per_sample.get_mut(&q.anchor).unwrap() += quint_total;
    }
    for (anchor, count) in anchor_counts {
        *out.per_sample.get_mut(&anchor).unwrap() /= count as f64;
    }
    Ok(out)
}
