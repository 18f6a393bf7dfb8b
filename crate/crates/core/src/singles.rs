//! Identification with observed singles.
//!
//! With `f̄` the density of all men of type `x` and `f₀` that of single men,
//! the reservation utility is `Φ(x,∅) = (σ/2)(log f₀/(f̄ - f₀) + c(x))` for an
//! undetermined gauge `c`, and the surplus from matching
//! `Φ(x,y) - Φ(x,∅) - Φ(∅,y)` is identified. On discrete types this is
//! `(σ/2) log(μ_xy² / (μ_x0 μ_0y))`.
//!
//! Continuous attributes are binned; densities are replaced by bin counts
//! (the normalizations cancel in every ratio used here).

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::{Coupling, DiscreteMarginal};
use crate::sample::MatchedSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    /// Per-attribute quantile bins computed on everyone of that side; a type
    /// is a cell of the product grid.
    Quantile { bins_per_attribute: usize },
    /// Interior cut points per attribute, one list per column.
    Explicit { edges_x: Vec<Vec<f64>>, edges_y: Vec<Vec<f64>> },
    /// Every distinct attribute row is its own type.
    Discrete,
}

impl Default for Binning {
    fn default() -> Self {
        Binning::Quantile { bins_per_attribute: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationWithSingles {
    pub matched: MatchedSample,
    pub singles_x: Array2<f64>,
    pub singles_y: Array2<f64>,
    pub binning: Binning,
}

/// Bin assignment of one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideBins {
    /// Representative attribute row per bin (cell centroid of the members,
    /// or the type itself for discrete binning).
    pub labels: Array2<f64>,
    /// Everyone of this side in the bin (matched plus single), `f̄`.
    pub total: Array1<f64>,
    /// Singles in the bin, `f₀`.
    pub singles: Array1<f64>,
    matched_bin: Vec<usize>,
}

impl SideBins {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// Bin of each matched individual, in sample order.
    pub fn matched_bins(&self) -> &[usize] {
        &self.matched_bin
    }

    pub fn matched(&self) -> Array1<f64> {
        &self.total - &self.singles
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedPopulation {
    pub x: SideBins,
    pub y: SideBins,
    /// Matched couple counts `μ_xy` per (x bin, y bin).
    pub couples: Array2<f64>,
}

fn quantile_edges(col: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = Vec::new();
    for k in 1..bins {
        let pos = (k * n) / bins;
        let e = sorted[pos.min(n - 1)];
        if edges.last().is_none_or(|l: &f64| e > *l) {
            edges.push(e);
        }
    }
    edges
}

/// Number of edges `≤ v`, i.e. bin index with bins `(-∞,e₀), [e₀,e₁), …`.
fn locate(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|e| *e <= v)
}

fn row_cmp(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> std::cmp::Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(u, v)| u.total_cmp(v))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn bin_side(matched: ArrayView2<f64>, singles: ArrayView2<f64>, binning: &Binning, edges: Option<&Vec<Vec<f64>>>) -> Result<SideBins> {
    let d = matched.ncols();
    if singles.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "singles have {} attributes, couples have {d}",
            singles.ncols()
        )));
    }
    let all: Vec<ndarray::ArrayView1<f64>> = matched.rows().into_iter().chain(singles.rows()).collect();
    let n_matched = matched.nrows();

    // raw key per individual, then dense renumbering in key order
    let keys: Vec<Vec<i64>> = match binning {
        Binning::Discrete => {
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.sort_by(|&a, &b| row_cmp(all[a], all[b]));
            let mut rank = vec![0i64; all.len()];
            let mut current = -1i64;
            for (k, &idx) in order.iter().enumerate() {
                if k == 0 || row_cmp(all[order[k - 1]], all[idx]).is_ne() {
                    current += 1;
                }
                rank[idx] = current;
            }
            rank.into_iter().map(|r| vec![r]).collect()
        }
        Binning::Quantile { bins_per_attribute } => {
            if *bins_per_attribute == 0 {
                return Err(Error::InvalidInput("need at least one bin per attribute".into()));
            }
            let cuts: Vec<Vec<f64>> = (0..d)
                .map(|j| {
                    let col: Vec<f64> = all.iter().map(|r| r[j]).collect();
                    quantile_edges(&col, *bins_per_attribute)
                })
                .collect();
            all.iter()
                .map(|r| (0..d).map(|j| locate(&cuts[j], r[j]) as i64).collect())
                .collect()
        }
        Binning::Explicit { .. } => {
            let cuts = edges.expect("explicit edges");
            if cuts.len() != d {
                return Err(Error::DimensionMismatch(format!("{} edge lists for {d} attributes", cuts.len())));
            }
            all.iter()
                .map(|r| (0..d).map(|j| locate(&cuts[j], r[j]) as i64).collect())
                .collect()
        }
    };
    let mut index: BTreeMap<&Vec<i64>, usize> = BTreeMap::new();
    for k in &keys {
        let next = index.len();
        index.entry(k).or_insert(next);
    }
    // renumber in key order for determinism
    let ordered: BTreeMap<&Vec<i64>, usize> = index.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let m = ordered.len();
    let mut total = Array1::<f64>::zeros(m);
    let mut singles_count = Array1::<f64>::zeros(m);
    let mut sums = Array2::<f64>::zeros((m, d));
    let mut bin_of = Vec::with_capacity(all.len());
    for (idx, k) in keys.iter().enumerate() {
        let b = ordered[k];
        bin_of.push(b);
        total[b] += 1.0;
        if idx >= n_matched {
            singles_count[b] += 1.0;
        }
        for j in 0..d {
            sums[[b, j]] += all[idx][j];
        }
    }
    let labels = Array2::from_shape_fn((m, d), |(b, j)| sums[[b, j]] / total[b]);
    Ok(SideBins {
        labels,
        total,
        singles: singles_count,
        matched_bin: bin_of[..n_matched].to_vec(),
    })
}

impl PopulationWithSingles {
    pub fn new(matched: MatchedSample, singles_x: Array2<f64>, singles_y: Array2<f64>, binning: Binning) -> Result<Self> {
        if singles_x.ncols() != matched.dx() || singles_y.ncols() != matched.dy() {
            return Err(Error::DimensionMismatch("singles and couples have different attributes".into()));
        }
        if singles_x.iter().chain(singles_y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("attribute values must be finite".into()));
        }
        Ok(Self {
            matched,
            singles_x,
            singles_y,
            binning,
        })
    }

    /// Share of singles among all individuals of each side.
    pub fn singles_shares(&self) -> (f64, f64) {
        let n = self.matched.n() as f64;
        let sx = self.singles_x.nrows() as f64;
        let sy = self.singles_y.nrows() as f64;
        (sx / (sx + n), sy / (sy + n))
    }

    pub fn bin(&self) -> Result<BinnedPopulation> {
        let (ex, ey) = match &self.binning {
            Binning::Explicit { edges_x, edges_y } => (Some(edges_x), Some(edges_y)),
            _ => (None, None),
        };
        let x = bin_side(self.matched.x.view(), self.singles_x.view(), &self.binning, ex)?;
        let y = bin_side(self.matched.y.view(), self.singles_y.view(), &self.binning, ey)?;
        let mut couples = Array2::<f64>::zeros((x.len(), y.len()));
        for (bx, by) in x.matched_bin.iter().zip(y.matched_bin.iter()) {
            couples[[*bx, *by]] += 1.0;
        }
        Ok(BinnedPopulation { x, y, couples })
    }
}

/// Additive gauge functions `c(x)`, `d(y)` over the bins; zero when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    pub c: Option<Array1<f64>>,
    pub d: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservationUtilities {
    /// `Φ(x,∅)` per x bin.
    pub phi_x_empty: Array1<f64>,
    /// `Φ(∅,y)` per y bin.
    pub phi_empty_y: Array1<f64>,
    /// The gauge the values were computed under.
    pub gauge_c: Array1<f64>,
    pub gauge_d: Array1<f64>,
    pub sigma: f64,
}

fn check_bins(side: &SideBins, need_singles: bool) -> Result<()> {
    for b in 0..side.len() {
        if side.total[b] <= 0.0 {
            return Err(Error::EmptyBin(b));
        }
        if side.total[b] <= side.singles[b] {
            return Err(Error::AllSingleBin(b));
        }
        if need_singles && side.singles[b] <= 0.0 {
            return Err(Error::ZeroSingles(b));
        }
    }
    Ok(())
}

fn gauge_or_zero(g: &Option<Array1<f64>>, len: usize) -> Result<Array1<f64>> {
    match g {
        Some(v) if v.len() == len => Ok(v.clone()),
        Some(v) => Err(Error::DimensionMismatch(format!("gauge of length {} for {len} bins", v.len()))),
        None => Ok(Array1::zeros(len)),
    }
}

/// `Φ(x,∅) = (σ/2)(log f₀/(f̄-f₀) + c(x))`, and symmetrically for women.
pub fn reservation_utilities(pop: &PopulationWithSingles, sigma: f64, gauge: &Gauge) -> Result<ReservationUtilities> {
    let binned = pop.bin()?;
    reservation_from_bins(&binned, sigma, gauge)
}

pub fn reservation_from_bins(binned: &BinnedPopulation, sigma: f64, gauge: &Gauge) -> Result<ReservationUtilities> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    check_bins(&binned.x, true)?;
    check_bins(&binned.y, true)?;
    let c = gauge_or_zero(&gauge.c, binned.x.len())?;
    let d = gauge_or_zero(&gauge.d, binned.y.len())?;
    let side = |s: &SideBins, g: &Array1<f64>| -> Array1<f64> {
        Array1::from_shape_fn(s.len(), |b| 0.5 * sigma * ((s.singles[b] / (s.total[b] - s.singles[b])).ln() + g[b]))
    };
    Ok(ReservationUtilities {
        phi_x_empty: side(&binned.x, &c),
        phi_empty_y: side(&binned.y, &d),
        gauge_c: c,
        gauge_d: d,
        sigma,
    })
}

/// Matched couples as a coupling over the bins.
pub fn binned_coupling(binned: &BinnedPopulation) -> Result<Coupling> {
    let total = binned.couples.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("no matched couples".into()));
    }
    let pi = &binned.couples / total;
    let p = DiscreteMarginal::from_masses(binned.x.matched(), binned.x.labels.clone())?;
    let q = DiscreteMarginal::from_masses(binned.y.matched(), binned.y.labels.clone())?;
    Ok(Coupling { pi, row_marginal: p, col_marginal: q })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSurplus {
    /// `log[π(y|x)(f̄-f₀)/f₀ · π(x|y)(ḡ-g₀)/g₀]`; `-∞` where no couple is observed.
    pub log_ratio: Array2<f64>,
    /// `(σ/2) · log_ratio`, i.e. `Φ(x,y) - Φ(x,∅) - Φ(∅,y)`.
    pub surplus: Array2<f64>,
    pub sigma: f64,
}

/// Gauge-free surplus from matching per (x bin, y bin).
///
/// `coupling` is the matched distribution over the bins of `pop`, typically
/// [`binned_coupling`].
pub fn matching_surplus(pop: &PopulationWithSingles, coupling: &Coupling, sigma: f64) -> Result<MatchingSurplus> {
    let binned = pop.bin()?;
    surplus_from_bins(&binned, coupling, sigma)
}

pub fn surplus_from_bins(binned: &BinnedPopulation, coupling: &Coupling, sigma: f64) -> Result<MatchingSurplus> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    if coupling.pi.dim() != binned.couples.dim() {
        return Err(Error::DimensionMismatch(format!(
            "coupling is {:?} but the population has {}×{} bins",
            coupling.pi.dim(),
            binned.x.len(),
            binned.y.len()
        )));
    }
    check_bins(&binned.x, true)?;
    check_bins(&binned.y, true)?;
    let pi = &coupling.pi;
    let row = pi.sum_axis(ndarray::Axis(1));
    let col = pi.sum_axis(ndarray::Axis(0));
    let odds_x = binned.x.matched() / &binned.x.singles;
    let odds_y = binned.y.matched() / &binned.y.singles;
    let log_ratio = Array2::from_shape_fn(pi.dim(), |(i, j)| {
        let v = pi[[i, j]];
        if v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ((v / row[i]) * odds_x[i] * (v / col[j]) * odds_y[j]).ln()
    });
    let surplus = log_ratio.mapv(|l| 0.5 * sigma * l);
    Ok(MatchingSurplus {
        log_ratio,
        surplus,
        sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExAnteSurplus {
    /// `u(x) = log f̄(x)/f₀(x)` per x bin.
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

/// Ex-ante expected utility surpluses `u = log f̄/f₀`, `v = log ḡ/g₀`.
pub fn exante_surplus(pop: &PopulationWithSingles) -> Result<ExAnteSurplus> {
    let binned = pop.bin()?;
    let side = |s: &SideBins| -> Result<Array1<f64>> {
        for b in 0..s.len() {
            if s.total[b] <= 0.0 {
                return Err(Error::EmptyBin(b));
            }
            if s.singles[b] <= 0.0 {
                return Err(Error::ZeroSingles(b));
            }
        }
        Ok(&s.total / &s.singles).map(|r| r.mapv(f64::ln))
    };
    Ok(ExAnteSurplus {
        u: side(&binned.x)?,
        v: side(&binned.y)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Population from type counts: couples[i][j], singles per type.
    fn discrete_pop(couples: &Array2<f64>, sx: &[usize], sy: &[usize]) -> PopulationWithSingles {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for ((i, j), c) in couples.indexed_iter() {
            for _ in 0..(*c as usize) {
                xs.push(i as f64);
                ys.push(j as f64);
            }
        }
        let n = xs.len();
        let matched = MatchedSample::new(
            Array2::from_shape_vec((n, 1), xs).unwrap(),
            Array2::from_shape_vec((n, 1), ys).unwrap(),
            None,
            None,
        )
        .unwrap();
        let flat = |s: &[usize]| -> Array2<f64> {
            let v: Vec<f64> = s.iter().enumerate().flat_map(|(t, c)| std::iter::repeat_n(t as f64, *c)).collect();
            Array2::from_shape_vec((v.len(), 1), v).unwrap()
        };
        PopulationWithSingles::new(matched, flat(sx), flat(sy), Binning::Discrete).unwrap()
    }

    #[test]
    fn surplus_matches_choo_siow_formula() {
        // μ_xy = 4 couples of type (0,0), μ_x0 = 2, μ_0y = 2
        let couples = array![[4.0, 1.0], [2.0, 3.0]];
        let pop = discrete_pop(&couples, &[2, 3], &[2, 5]);
        let binned = pop.bin().unwrap();
        let c = binned_coupling(&binned).unwrap();
        let s = matching_surplus(&pop, &c, 1.0).unwrap();
        assert!((s.log_ratio[[0, 0]] - 4f64.ln()).abs() < 1e-15);
        for ((i, j), m) in couples.indexed_iter() {
            let m0 = [2.0, 3.0][i];
            let n0 = [2.0, 5.0][j];
            let expected = (m * m / (m0 * n0)).ln();
            assert!((s.log_ratio[[i, j]] - expected).abs() <= 4.0 * f64::EPSILON * expected.abs().max(1.0));
            assert!((s.surplus[[i, j]] - 0.5 * expected).abs() < 1e-14);
        }
    }

    #[test]
    fn surplus_is_scale_invariant() {
        let couples = array![[4.0, 1.0], [2.0, 3.0]];
        let a = discrete_pop(&couples, &[2, 3], &[2, 5]);
        let b = discrete_pop(&(&couples * 2.0), &[4, 6], &[4, 10]);
        let sa = matching_surplus(&a, &binned_coupling(&a.bin().unwrap()).unwrap(), 1.0).unwrap();
        let sb = matching_surplus(&b, &binned_coupling(&b.bin().unwrap()).unwrap(), 1.0).unwrap();
        for (u, v) in sa.log_ratio.iter().zip(sb.log_ratio.iter()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn independence_gives_separable_surplus() {
        let couples = array![[2.0, 4.0, 6.0], [3.0, 6.0, 9.0]];
        let pop = discrete_pop(&couples, &[6, 1], &[5, 2, 7]);
        let s = matching_surplus(&pop, &binned_coupling(&pop.bin().unwrap()).unwrap(), 1.0).unwrap();
        let l = &s.log_ratio;
        for i in 0..2 {
            for j in 0..3 {
                let interaction = l[[i, j]] - l[[i, 0]] - l[[0, j]] + l[[0, 0]];
                assert!(interaction.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_singles_have_zero_reservation_utility() {
        let couples = array![[2.0, 1.0], [1.0, 2.0]];
        let pop = discrete_pop(&couples, &[3, 3], &[3, 3]);
        let r = reservation_utilities(&pop, 1.0, &Gauge::default()).unwrap();
        assert!(r.phi_x_empty.iter().chain(r.phi_empty_y.iter()).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn reservation_two_type_hand_values() {
        let couples = array![[3.0, 1.0], [1.0, 1.0]];
        let pop = discrete_pop(&couples, &[1, 4], &[2, 1]);
        let r = reservation_utilities(&pop, 2.0, &Gauge::default()).unwrap();
        // type 0 men: 4 matched, 1 single; type 1: 2 matched, 4 singles
        assert!((r.phi_x_empty[0] - (0.25f64).ln()).abs() < 1e-15);
        assert!((r.phi_x_empty[1] - 2f64.ln()).abs() < 1e-15);
        let g = Gauge {
            c: Some(array![1.0, -1.0]),
            d: None,
        };
        let rg = reservation_utilities(&pop, 2.0, &g).unwrap();
        assert!((rg.phi_x_empty[0] - r.phi_x_empty[0] - 1.0).abs() < 1e-15);
        assert_eq!(rg.gauge_c, array![1.0, -1.0]);
    }

    #[test]
    fn degenerate_bins_are_reported() {
        let couples = array![[2.0, 0.0], [0.0, 0.0]];
        // type 1 men exist only as singles
        let pop = discrete_pop(&couples, &[1, 2], &[1, 0]);
        assert_eq!(reservation_utilities(&pop, 1.0, &Gauge::default()).unwrap_err(), Error::AllSingleBin(1));
        let pop = discrete_pop(&array![[2.0]], &[0], &[1]);
        assert_eq!(reservation_utilities(&pop, 1.0, &Gauge::default()).unwrap_err(), Error::ZeroSingles(0));
        assert_eq!(exante_surplus(&pop).unwrap_err(), Error::ZeroSingles(0));
    }

    #[test]
    fn exante_values() {
        let couples = array![[1.0, 1.0], [0.0, 3.0]];
        // type 0: 2 matched + 2 single => f̄ = 2 f₀
        let pop = discrete_pop(&couples, &[2, 3], &[1, 4]);
        let e = exante_surplus(&pop).unwrap();
        assert!((e.u[0] - 2f64.ln()).abs() < 1e-15);
        assert!((e.u[1] - 2f64.ln()).abs() < 1e-15);
        assert!((e.v[0] - 2f64.ln()).abs() < 1e-15);
        assert!((e.v[1] - (8.0f64 / 4.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn quantile_bins_group_continuous_values() {
        let n = 50;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let y = Array2::from_shape_fn((n, 1), |(i, _)| 1.0 - i as f64 / n as f64);
        let matched = MatchedSample::new(x, y, None, None).unwrap();
        let sx = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 / 50.0 + 0.001);
        let sy = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 / 50.0 + 0.001);
        let pop = PopulationWithSingles::new(matched, sx, sy, Binning::default()).unwrap();
        let b = pop.bin().unwrap();
        assert_eq!(b.x.len(), 5);
        assert_eq!(b.x.total.sum(), 100.0);
        assert!(b.x.total.iter().all(|t| *t == 20.0));
        assert!(b.x.singles.iter().all(|t| *t == 10.0));
        assert_eq!(b.couples.sum(), 50.0);
        let e = exante_surplus(&pop).unwrap();
        assert!(e.u.iter().all(|v| (v - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn surplus_does_not_depend_on_gauge() {
        let couples = array![[3.0, 1.0], [1.0, 2.0]];
        let pop = discrete_pop(&couples, &[1, 4], &[2, 1]);
        let c = binned_coupling(&pop.bin().unwrap()).unwrap();
        let s = matching_surplus(&pop, &c, 1.0).unwrap();
        // Φ_xy identified from couples, reservation values from any gauge:
        // surplus must equal (σ/2) log μ² /(μ_x0 μ_0y) whatever c, d.
        for gauge in [Gauge::default(), Gauge { c: Some(array![5.0, -2.0]), d: Some(array![0.3, 0.1]) }] {
            let r = reservation_utilities(&pop, 1.0, &gauge).unwrap();
            let phi = Array2::from_shape_fn((2, 2), |(i, j)| s.surplus[[i, j]] + r.phi_x_empty[i] + r.phi_empty_y[j]);
            let back = Array2::from_shape_fn((2, 2), |(i, j)| phi[[i, j]] - r.phi_x_empty[i] - r.phi_empty_y[j]);
            for (u, v) in back.iter().zip(s.surplus.iter()) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }
}
