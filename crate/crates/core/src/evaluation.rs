//! Shape graphs, reward scaling, shape distance, returns and action accuracy.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularPolicy, Trajectory};
use crate::reward_models::{export_shape_graph, FeatureCounts, GamReward, RewardModel};
use crate::sepsis::{GroundTruthKind, GroundTruthReward, SepsisFeatures};
use crate::reward_models::FeatureMap;

/// Values closer than this are treated as the same feature value when two
/// graphs are aligned.
const VALUE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePoint {
    pub value: f64,
    pub contribution: f64,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub name: String,
    pub points: Vec<ShapePoint>,
}

impl FeatureShape {
    pub fn total_count(&self) -> f64 {
        self.points.iter().map(|p| p.count).sum()
    }

    /// `max - min` of the contributions over points with positive count.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .points
            .iter()
            .filter(|p| p.count > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.contribution), hi.max(p.contribution)));
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    /// Value of the highest contribution; ties go to the first point.
    pub fn argmax_value(&self) -> f64 {
        let mut best = &self.points[0];
        for p in &self.points[1..] {
            if p.contribution > best.contribution {
                best = p;
            }
        }
        best.value
    }
}

/// Per-feature contribution curves annotated with expert-data counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeGraph {
    pub features: Vec<FeatureShape>,
}

impl ShapeGraph {
    /// Subtracts each feature's count-weighted mean contribution. Features
    /// with no counts are centered by their plain mean.
    pub fn center(&mut self) {
        for f in &mut self.features {
            let total = f.total_count();
            let mean = if total > 0.0 {
                f.points.iter().map(|p| p.count * p.contribution).sum::<f64>() / total
            } else if f.points.is_empty() {
                0.0
            } else {
                f.points.iter().map(|p| p.contribution).sum::<f64>() / f.points.len() as f64
            };
            for p in &mut f.points {
                p.contribution -= mean;
            }
        }
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureShape> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Multiplies every contribution by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for f in &mut out.features {
            for p in &mut f.points {
                p.contribution *= k;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "feature,value,contribution,count")?;
        for f in &self.features {
            for p in &f.points {
                writeln!(out, "{},{},{},{}", f.name, p.value, p.contribution, p.count)?;
            }
        }
        Ok(())
    }

    /// Parses the CSV written by [`ShapeGraph::write_csv`]. Rows of one
    /// feature must be contiguous.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut features: Vec<FeatureShape> = Vec::new();
        let mut lines = input.lines().enumerate();
        let header = lines.next().map(|(_, h)| h).transpose()?;
        match header {
            Some(h) if h.trim() == "feature,value,contribution,count" => {}
            _ => return Err(Error::Parse { line: 1, message: "expected header feature,value,contribution,count".into() }),
        }
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.trim().split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Parse { line: lineno, message: format!("expected 4 columns, got {}", cols.len()) });
            }
            let num = |j: usize| -> Result<f64> {
                cols[j].parse::<f64>().map_err(|e| Error::Parse { line: lineno, message: format!("column {}: {e}", j + 1) })
            };
            let point = ShapePoint { value: num(1)?, contribution: num(2)?, count: num(3)? };
            match features.last_mut() {
                Some(f) if f.name == cols[0] => f.points.push(point),
                _ => {
                    if features.iter().any(|f| f.name == cols[0]) {
                        return Err(Error::Parse { line: lineno, message: format!("rows of feature {} are not contiguous", cols[0]) });
                    }
                    features.push(FeatureShape { name: cols[0].to_string(), points: vec![point] });
                }
            }
        }
        Ok(Self { features })
    }
}

/// Ground-truth sepsis reward as a centered shape graph over the reward
/// features (the noise feature contributes zero everywhere).
pub fn ground_truth_graph(kind: GroundTruthKind, counts: &FeatureCounts) -> Result<ShapeGraph> {
    let specs = SepsisFeatures::new().reward_specs().to_vec();
    let t = GroundTruthReward::new(kind).tables();
    let zeros = vec![0.0; specs[4].num_bins()];
    let gam = GamReward::from_tables(specs, 0.0, &[t[0], t[1], t[2], t[3], &zeros]);
    export_shape_graph(&RewardModel::Gam(gam), counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleConstraint {
    #[default]
    Any,
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistWeighting {
    /// Each value weighted by its expert-data count.
    #[default]
    Counts,
    /// Every value with positive count weighted equally.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub scale: f64,
    pub objective: f64,
    /// The model graph was identically zero, so every scale is optimal.
    pub degenerate: bool,
}

/// Aligned `(ground truth, model, weight)` triples over the features and
/// values both graphs share, dropping zero-count values. Counts come from the
/// model graph.
fn align(model: &ShapeGraph, gt: &ShapeGraph, weighting: DistWeighting) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for mf in &model.features {
        let Some(gf) = gt.feature(&mf.name) else { continue };
        for mp in &mf.points {
            if mp.count <= 0.0 {
                continue;
            }
            if let Some(gp) = gf.points.iter().find(|g| (g.value - mp.value).abs() < VALUE_MATCH_TOL) {
                let w = match weighting {
                    DistWeighting::Counts => mp.count,
                    DistWeighting::Uniform => 1.0,
                };
                out.push((gp.contribution, mp.contribution, w));
            }
        }
    }
    out
}

/// Minimizes `Σ w_i |g_i − a·m_i|` exactly. Each term is `w|m|·|g/m − a|`, so
/// the minimizer is a weighted median of the breakpoints `g/m`.
fn weighted_l1_scale(terms: &[(f64, f64, f64)], constraint: ScaleConstraint) -> ScalingResult {
    let mut breaks: Vec<(f64, f64)> = terms
        .iter()
        .filter(|(_, m, w)| *m != 0.0 && *w > 0.0)
        .map(|&(g, m, w)| (g / m, w * m.abs()))
        .collect();
    if breaks.is_empty() {
        let objective = terms.iter().map(|(g, _, w)| w * g.abs()).sum();
        return ScalingResult { scale: 0.0, objective, degenerate: true };
    }
    breaks.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = breaks.iter().map(|b| b.1).sum();
    let mut acc = 0.0;
    let mut scale = breaks[breaks.len() - 1].0;
    for &(b, w) in &breaks {
        acc += w;
        if acc >= 0.5 * total {
            scale = b;
            break;
        }
    }
    if constraint == ScaleConstraint::NonNegative {
        scale = scale.max(0.0);
    }
    let objective = terms.iter().map(|(g, m, w)| w * (g - scale * m).abs()).sum();
    ScalingResult { scale, objective, degenerate: false }
}

/// Scale `a` minimizing the weighted ℓ1 gap between the ground truth and the
/// scaled model.
pub fn scale_to_ground_truth(model: &ShapeGraph, gt: &ShapeGraph) -> ScalingResult {
    scale_to_ground_truth_with(model, gt, ScaleConstraint::Any, DistWeighting::Counts)
}

pub fn scale_to_ground_truth_with(
    model: &ShapeGraph,
    gt: &ShapeGraph,
    constraint: ScaleConstraint,
    weighting: DistWeighting,
) -> ScalingResult {
    weighted_l1_scale(&align(model, gt, weighting), constraint)
}

/// Count-weighted mean absolute gap `Σ|g − a·m|·c / Σc` at the given scale.
pub fn shape_distance(model: &ShapeGraph, gt: &ShapeGraph, scaling: &ScalingResult) -> f64 {
    shape_distance_with(model, gt, scaling, DistWeighting::Counts)
}

pub fn shape_distance_with(model: &ShapeGraph, gt: &ShapeGraph, scaling: &ScalingResult, weighting: DistWeighting) -> f64 {
    let terms = align(model, gt, weighting);
    let total: f64 = terms.iter().map(|t| t.2).sum();
    if total == 0.0 {
        return 0.0;
    }
    terms.iter().map(|(g, m, w)| w * (g - scaling.scale * m).abs()).sum::<f64>() / total
}

/// Per-feature `(min, max)` over points with positive count, for features
/// present in both graphs.
fn extremes(a: &ShapeGraph, b: &ShapeGraph) -> Vec<((f64, f64), (f64, f64))> {
    let ext = |f: &FeatureShape| {
        f.points
            .iter()
            .filter(|p| p.count > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.contribution), hi.max(p.contribution)))
    };
    a.features
        .iter()
        .filter_map(|fa| b.feature(&fa.name).map(|fb| (ext(fa), ext(fb))))
        .filter(|((lo, _), (lo_b, _))| lo.is_finite() && lo_b.is_finite())
        .collect()
}

/// Scale `a` for `graph_b` that best matches the per-feature minimum and
/// maximum of `graph_a`: minimizes `Σ_j |min A_j − min(a·B_j)| + |max A_j −
/// max(a·B_j)|`. For negative `a` the extremes of `a·B_j` swap roles, so the
/// objective is solved on each half-line separately and the better side kept.
pub fn scale_for_display(graph_a: &ShapeGraph, graph_b: &ShapeGraph) -> ScalingResult {
    let ext = extremes(graph_a, graph_b);
    let positive: Vec<(f64, f64, f64)> =
        ext.iter().flat_map(|&((alo, ahi), (blo, bhi))| [(alo, blo, 1.0), (ahi, bhi, 1.0)]).collect();
    // a < 0: min(a·B) = a·max B and max(a·B) = a·min B.
    let negative: Vec<(f64, f64, f64)> =
        ext.iter().flat_map(|&((alo, ahi), (blo, bhi))| [(alo, bhi, 1.0), (ahi, blo, 1.0)]).collect();
    let pos = weighted_l1_scale(&positive, ScaleConstraint::NonNegative);
    if pos.degenerate {
        return pos;
    }
    let neg = weighted_l1_scale(&negate_model(&negative), ScaleConstraint::NonNegative);
    let neg = ScalingResult { scale: -neg.scale, ..neg };
    if neg.objective < pos.objective {
        neg
    } else {
        pos
    }
}

/// Substitutes `a → −a` so a non-positive search becomes a non-negative one.
fn negate_model(terms: &[(f64, f64, f64)]) -> Vec<(f64, f64, f64)> {
    terms.iter().map(|&(g, m, w)| (g, -m, w)).collect()
}

/// Fraction of logged transitions whose action equals the policy's argmax
/// (ties to the lowest action id). Zero for an empty batch.
pub fn action_match_accuracy(policy: &TabularPolicy, trajectories: &[Trajectory]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for t in trajectories.iter().flat_map(|t| &t.steps) {
        total += 1;
        if policy.greedy_action(t.state) == t.action {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// `(G_expert − G_learned) / (G_expert − G_uniform)`.
pub fn normalized_regret(expert_return: f64, learned_return: f64, uniform_return: f64) -> f64 {
    (expert_return - learned_return) / (expert_return - uniform_return)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub mdp: String,
    pub gamma: f64,
    #[serde(rename = "return")]
    pub policy_return: f64,
    /// Empty when no ground truth was available.
    pub dist: Option<f64>,
    pub accuracy: f64,
    pub seed: u64,
}

pub const RESULTS_HEADER: &str = "method,mdp,gamma,return,dist,accuracy,seed";

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let dist = self.dist.map(|d| d.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.method, self.mdp, self.gamma, self.policy_return, dist, self.accuracy, self.seed
        )
    }

    pub fn parse_csv_line(line: &str, lineno: usize) -> Result<Self> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Parse { line: lineno, message: format!("expected 7 columns, got {}", cols.len()) });
        }
        let err = |j: usize, e: &dyn std::fmt::Display| Error::Parse { line: lineno, message: format!("column {}: {e}", j + 1) };
        let f = |j: usize| cols[j].parse::<f64>().map_err(|e| err(j, &e));
        Ok(Self {
            method: cols[0].to_string(),
            mdp: cols[1].to_string(),
            gamma: f(2)?,
            policy_return: f(3)?,
            dist: if cols[4].is_empty() { None } else { Some(f(4)?) },
            accuracy: f(5)?,
            seed: cols[6].parse::<u64>().map_err(|e| err(6, &e))?,
        })
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    Ok(())
}

pub fn read_results<R: BufRead>(input: R) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != RESULTS_HEADER {
                return Err(Error::Parse { line: 1, message: format!("expected header {RESULTS_HEADER}") });
            }
            continue;
        }
        if !line.trim().is_empty() {
            rows.push(ResultRow::parse_csv_line(&line, i + 1)?);
        }
    }
    Ok(rows)
}
