//! Exemplar-based explanations over an anchored bank.
//!
//! Once every sub-centroid is a real training observation, a class decision
//! can be spelled out as an IF ... THEN rule: the query is at least as similar
//! to one of the class's exemplars as to every rival exemplar. A similarity
//! report complements the rule view with the top-m classes, each represented
//! by its closest sub-centroid, with raw and normalized similarity.

use std::fmt;

use crate::bank::SubCentroidBank;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// One similarity comparison: the query must be strictly more similar to the
/// class's own anchored exemplar than to a rival class's exemplar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleClause {
    /// Training-sample id of the class's own exemplar.
    pub own_anchor: usize,
    /// Training-sample id of the rival exemplar.
    pub rival_anchor: usize,
}

/// Disjunction over the class's K exemplars of conjunctions over T rivals:
/// "IF ([I,own_1]>[I,rival_1] AND ...) OR ... THEN class c".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub class_id: usize,
    /// K disjuncts, each with exactly T conjunct clauses.
    pub disjuncts: Vec<Vec<RuleClause>>,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IF ")?;
        for (i, disjunct) in self.disjuncts.iter().enumerate() {
            if i > 0 {
                write!(f, " OR ")?;
            }
            write!(f, "(")?;
            for (j, clause) in disjunct.iter().enumerate() {
                if j > 0 {
                    write!(f, " AND ")?;
                }
                write!(
                    f,
                    "[I,#{}]>[I,#{}]",
                    clause.own_anchor, clause.rival_anchor
                )?;
            }
            write!(f, ")")?;
        }
        write!(f, " THEN (class {})", self.class_id)
    }
}

/// One line of a similarity report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportEntry {
    pub class_id: usize,
    /// Sub-centroid of the class closest to the query.
    pub sub_index: usize,
    /// Anchored sample id of that sub-centroid, when the bank is anchored.
    pub anchor_id: Option<usize>,
    pub raw_similarity: f64,
    /// Softmax-normalized over the reported entries; sums to 1.
    pub normalized_similarity: f64,
}

/// Top-m classes for one query, sorted by similarity descending.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub query_id: usize,
    pub entries: Vec<ReportEntry>,
    pub predicted_class: usize,
}

impl fmt::Display for SimilarityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "query={}", self.query_id)?;
        writeln!(f, "predicted_class={}", self.predicted_class)?;
        for (rank, e) in self.entries.iter().enumerate() {
            write!(
                f,
                "rank={} class={} sub={} raw={:.6} normalized={:.6}",
                rank + 1,
                e.class_id,
                e.sub_index,
                e.raw_similarity,
                e.normalized_similarity
            )?;
            if let Some(id) = e.anchor_id {
                write!(f, " anchor=#{id}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Build the rule for class `c` over explicit rival (class, sub) pairs.
/// The bank must be anchored; rivals must all belong to other classes.
pub fn build_rule(
    bank: &SubCentroidBank,
    c: usize,
    rivals: &[(usize, usize)],
) -> Result<Rule> {
    let anchors = bank
        .anchor_ids()
        .ok_or_else(|| Error::Data("rules need an anchored bank".into()))?;
    if c >= bank.num_classes() {
        return Err(Error::Shape(format!("class {c} out of range")));
    }
    if rivals.is_empty() {
        return Err(Error::Config("rule needs at least one rival".into()));
    }
    for &(rc, rk) in rivals {
        if rc == c {
            return Err(Error::Config(format!(
                "rival ({rc},{rk}) belongs to the rule's own class"
            )));
        }
        if rc >= bank.num_classes() || rk >= bank.k_for(rc) {
            return Err(Error::Shape(format!("rival ({rc},{rk}) out of range")));
        }
    }
    let disjuncts = anchors[c]
        .iter()
        .map(|&own| {
            rivals
                .iter()
                .map(|&(rc, rk)| RuleClause {
                    own_anchor: own,
                    rival_anchor: anchors[rc][rk],
                })
                .collect()
        })
        .collect();
    Ok(Rule {
        class_id: c,
        disjuncts,
    })
}

/// All sub-centroids of all other classes as rivals: T = sum of K over
/// classes != c, enumerated in (class, sub) order.
pub fn exhaustive_rivals(bank: &SubCentroidBank, c: usize) -> Vec<(usize, usize)> {
    let mut rivals = Vec::new();
    for rc in 0..bank.num_classes() {
        if rc == c {
            continue;
        }
        for rk in 0..bank.k_for(rc) {
            rivals.push((rc, rk));
        }
    }
    rivals
}

/// Evaluate a rule for a query embedding: true iff some disjunct's every
/// comparison holds strictly. Anchors resolve through `train_features`
/// (row index = sample id); exact similarity ties evaluate false.
pub fn evaluate_rule(rule: &Rule, query: &[f64], train_features: &Matrix) -> Result<bool> {
    let resolve = |id: usize| -> Result<&[f64]> {
        if id >= train_features.rows() {
            return Err(Error::Data(format!(
                "anchor #{id} not resolvable in {} training rows",
                train_features.rows()
            )));
        }
        Ok(train_features.row(id))
    };
    for disjunct in &rule.disjuncts {
        let mut all_hold = true;
        for clause in disjunct {
            let own = dot(query, resolve(clause.own_anchor)?);
            let rival = dot(query, resolve(clause.rival_anchor)?);
            // Strict comparison: exact ties do not satisfy the clause.
            let holds = own > rival;
            if !holds {
                all_hold = false;
                break;
            }
        }
        if all_hold {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Top-m classes by best-sub-centroid similarity. Normalized similarities are
/// a softmax over the m reported raw values (raw values are kept alongside);
/// the rank-1 entry is the predicted class.
pub fn similarity_report(
    query_id: usize,
    query: &[f64],
    bank: &SubCentroidBank,
    m: usize,
) -> Result<SimilarityReport> {
    if m == 0 || m > bank.num_classes() {
        return Err(Error::Config(format!(
            "top-m must be in [1, {}], got {m}",
            bank.num_classes()
        )));
    }
    let query_matrix = Matrix::from_rows(&[query.to_vec()])?;
    let scored = crate::head::class_scores(&query_matrix, bank)?;
    let mut ranked: Vec<(usize, usize, f64)> = (0..bank.num_classes())
        .map(|c| (c, scored.winner(0, c), scored.scores.get(0, c)))
        .collect();
    ranked.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(m);

    // Stabilized softmax over the reported raw similarities.
    let max = ranked.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = ranked.iter().map(|r| (r.2 - max).exp()).collect();
    let sum: f64 = exp.iter().sum();

    let entries: Vec<ReportEntry> = ranked
        .iter()
        .zip(&exp)
        .map(|(&(class_id, sub_index, raw), &e)| ReportEntry {
            class_id,
            sub_index,
            anchor_id: bank.anchor_ids().map(|ids| ids[class_id][sub_index]),
            raw_similarity: raw,
            normalized_similarity: e / sum,
        })
        .collect();
    Ok(SimilarityReport {
        query_id,
        predicted_class: entries[0].class_id,
        entries,
    })
}
