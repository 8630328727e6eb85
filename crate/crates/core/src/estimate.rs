//! Point estimation on the effective sample.
//!
//! Every fit is a weighted least-squares regression with weights
//! `w_i = 1/π_i(T_i)`. The regressor is a cell-indicator vector `z_i`,
//! optionally extended by centered covariates:
//!
//! * [`WlsSpec::Unadjusted`] regresses `Y` on `z`; its coefficients are the
//!   Hájek means.
//! * [`WlsSpec::Additive`] regresses `Y` on `(z, x)`.
//! * [`WlsSpec::FullyInteracted`] regresses `Y` on `(z, z ⊗ x)`; column
//!   `|𝒯| + t·J + j` holds `1(T_i = t)·x_ij`.
//! * [`WlsSpec::HtTransformed`] rescales `Y` and `w` by the Horvitz–Thompson
//!   estimate of one so the coefficients become the HT means.
//!
//! The continuous-exposure estimators at the bottom of the module work on raw
//! per-unit vectors and do not need a [`Dataset`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::PropensityTable;
use crate::error::{Error, Result};
use crate::linalg::{PivotedCholesky, RANK_TOL};

/// Analysis data restricted to the effective sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    units: Vec<usize>,
    y: Vec<f64>,
    x: DMatrix<f64>,
    t: Vec<usize>,
    pi: Vec<f64>,
    support: usize,
    labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from rows already restricted to the analysed units.
    ///
    /// `x` is `n × J` (use `J = 0` for no covariates) and is centered here
    /// over the sample. `pi` must have one row per unit. `labels` names the
    /// exposure values for error messages and reports.
    pub fn new(
        units: Vec<usize>,
        y: Vec<f64>,
        x: DMatrix<f64>,
        t: Vec<usize>,
        pi: &PropensityTable,
        labels: Vec<String>,
    ) -> Result<Self> {
        let n = units.len();
        let support = pi.support();
        if y.len() != n || t.len() != n || x.nrows() != n || pi.n() != n {
            return Err(Error::Shape(format!(
                "dataset parts disagree: {n} units, {} outcomes, {} exposures, {} covariate rows, {} propensity rows",
                y.len(),
                t.len(),
                x.nrows(),
                pi.n()
            )));
        }
        if labels.len() != support {
            return Err(Error::Shape(format!(
                "{} labels for {support} exposure values",
                labels.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyEffectiveSample);
        }
        for (k, (&ti, &u)) in t.iter().zip(&units).enumerate() {
            if ti >= support {
                return Err(Error::Data(format!(
                    "unit {u}: exposure index {ti} outside the support"
                )));
            }
            let p = pi.get(k, ti);
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Data(format!(
                    "unit {u}: propensity {p} of its realized exposure {} is not in (0, 1)",
                    labels[ti]
                )));
            }
            if !y[k].is_finite() {
                return Err(Error::Data(format!("unit {u}: outcome is not finite")));
            }
        }
        let mut x = x;
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Ok(Dataset {
            units,
            y,
            x,
            t,
            pi: pi.as_slice().to_vec(),
            support,
            labels,
        })
    }

    /// Restricts population vectors to `units` and builds the dataset.
    /// `x` is `N × J` over the whole population; `pi` has one row per
    /// population unit.
    pub fn from_population(
        units: &[usize],
        y: &[f64],
        x: &DMatrix<f64>,
        t: &[usize],
        pi: &PropensityTable,
        labels: Vec<String>,
    ) -> Result<Self> {
        let xs = DMatrix::from_fn(units.len(), x.ncols(), |r, c| x[(units[r], c)]);
        Dataset::new(
            units.to_vec(),
            units.iter().map(|&i| y[i]).collect(),
            xs,
            units.iter().map(|&i| t[i]).collect(),
            &pi.restrict(units),
            labels,
        )
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Centered covariates, `n × J`.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn t(&self) -> &[usize] {
        &self.t
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn pi(&self, k: usize, t: usize) -> f64 {
        self.pi[k * self.support + t]
    }

    /// Propensity of each unit's realized exposure.
    pub fn pi_realized(&self, k: usize) -> f64 {
        self.pi(k, self.t[k])
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.support];
        for &t in &self.t {
            c[t] += 1;
        }
        c
    }

    /// Same dataset with outcomes replaced.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Shape(format!(
                "{} outcomes for {} units",
                y.len(),
                self.n()
            )));
        }
        Ok(Dataset { y, ..self.clone() })
    }

    /// Same population and outcomes with a new realized exposure vector
    /// (indexed like the dataset's units).
    pub fn with_exposures(&self, t: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        if t.len() != self.n() || y.len() != self.n() {
            return Err(Error::Shape("exposure or outcome length mismatch".into()));
        }
        Ok(Dataset {
            t,
            y,
            ..self.clone()
        })
    }

    /// `1̂_ht(t) = n⁻¹ Σ_i 1_i(t)/π_i(t)`.
    pub fn one_ht(&self, t: usize) -> f64 {
        let s: f64 = (0..self.n())
            .filter(|&k| self.t[k] == t)
            .map(|k| 1.0 / self.pi(k, t))
            .sum();
        s / self.n() as f64
    }
}

pub fn hajek(ds: &Dataset, t: usize) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..ds.n() {
        if ds.t[k] == t {
            let w = 1.0 / ds.pi(k, t);
            num += w * ds.y[k];
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::EmptyCell(ds.labels[t].clone()));
    }
    Ok(num / den)
}

pub fn horvitz_thompson(ds: &Dataset, t: usize) -> f64 {
    let s: f64 = (0..ds.n())
        .filter(|&k| ds.t[k] == t)
        .map(|k| ds.y[k] / ds.pi(k, t))
        .sum();
    s / ds.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WlsSpec {
    #[serde(alias = "unadj")]
    Unadjusted,
    #[serde(alias = "add")]
    Additive,
    #[serde(alias = "sat", alias = "full")]
    FullyInteracted,
    #[serde(alias = "ht")]
    HtTransformed,
}

impl WlsSpec {
    pub fn short_name(self) -> &'static str {
        match self {
            WlsSpec::Unadjusted => "Unadj",
            WlsSpec::Additive => "Add",
            WlsSpec::FullyInteracted => "Sat",
            WlsSpec::HtTransformed => "HT",
        }
    }

    /// Whether the fit includes covariate columns after the cell block.
    pub fn adjusts(self) -> bool {
        matches!(self, WlsSpec::Additive | WlsSpec::FullyInteracted)
    }
}

/// A fitted weighted regression with everything the sandwich needs.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub spec: WlsSpec,
    /// All coefficients; the first `support` are the cell means.
    pub coef: DVector<f64>,
    /// Regressor matrix `C`, `n × p`.
    pub design: DMatrix<f64>,
    /// Response actually regressed (`Ỹ` for the HT transform).
    pub response: Vec<f64>,
    pub weights: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(Cᵀ W C)⁻¹`.
    pub bread_inv: DMatrix<f64>,
    pub support: usize,
    pub covariates: usize,
    pub labels: Vec<String>,
}

impl WlsFit {
    pub fn beta(&self) -> &[f64] {
        &self.coef.as_slice()[..self.support]
    }

    /// `γ̂_F` for additive fits.
    pub fn gamma(&self) -> Option<&[f64]> {
        match self.spec {
            WlsSpec::Additive => Some(&self.coef.as_slice()[self.support..]),
            _ => None,
        }
    }

    /// `γ̂_L(t)` for fully interacted fits.
    pub fn gamma_cell(&self, t: usize) -> Option<&[f64]> {
        match self.spec {
            WlsSpec::FullyInteracted => {
                let j = self.covariates;
                let start = self.support + t * j;
                Some(&self.coef.as_slice()[start..start + j])
            }
            _ => None,
        }
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn nparams(&self) -> usize {
        self.coef.len()
    }

    /// Score contributions `u_i = w_i e_i c_i`, one row per unit.
    pub fn scores(&self) -> DMatrix<f64> {
        let mut u = self.design.clone();
        for (i, mut row) in u.row_iter_mut().enumerate() {
            row *= self.weights[i] * self.residuals[i];
        }
        u
    }
}

fn column_name(spec: WlsSpec, col: usize, support: usize, j: usize, labels: &[String]) -> String {
    if col < support {
        return format!("cell t={}", labels[col]);
    }
    let k = col - support;
    match spec {
        WlsSpec::FullyInteracted => format!("covariate x{} in cell t={}", k % j + 1, labels[k / j]),
        _ => format!("covariate x{}", k + 1),
    }
}

fn solve_weighted(
    spec: WlsSpec,
    c: DMatrix<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    ds: &Dataset,
) -> Result<WlsFit> {
    let (n, p) = c.shape();
    let mut cw = c.clone();
    for (i, mut row) in cw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let bread = c.transpose() * &cw;
    let chol = PivotedCholesky::factor(&bread, RANK_TOL).map_err(|cols| {
        let names: Vec<String> = cols
            .iter()
            .map(|&k| column_name(spec, k, ds.support, ds.covariates(), &ds.labels))
            .collect();
        Error::RankDeficient(format!(
            "{} fit cannot identify {}",
            spec.short_name(),
            names.join(", ")
        ))
    })?;
    let yv = DVector::from_column_slice(&y);
    let coef = chol.solve_vec(&(cw.transpose() * &yv));
    let fitted = &c * &coef;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    debug_assert_eq!(coef.len(), p);
    Ok(WlsFit {
        spec,
        coef,
        bread_inv: chol.inverse(),
        design: c,
        response: y,
        weights: w,
        residuals,
        support: ds.support,
        covariates: ds.covariates(),
        labels: ds.labels.clone(),
    })
}

pub fn fit_wls(ds: &Dataset, spec: WlsSpec) -> Result<WlsFit> {
    if spec == WlsSpec::HtTransformed {
        return fit_ht_wls(ds);
    }
    let n = ds.n();
    let s = ds.support;
    let j = ds.covariates();
    let counts = ds.cell_counts();
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCell(ds.labels[t].clone()));
    }
    if spec == WlsSpec::FullyInteracted && j > 0 {
        if let Some(t) = counts.iter().position(|&c| c < j + 1) {
            return Err(Error::RankDeficient(format!(
                "cell t={} has {} units, the fully interacted fit needs at least {}",
                ds.labels[t],
                counts[t],
                j + 1
            )));
        }
    }
    let p = match spec {
        WlsSpec::Unadjusted => s,
        WlsSpec::Additive => s + j,
        _ => s + s * j,
    };
    let mut c = DMatrix::zeros(n, p);
    for k in 0..n {
        let t = ds.t[k];
        c[(k, t)] = 1.0;
        match spec {
            WlsSpec::Additive => {
                for jj in 0..j {
                    c[(k, s + jj)] = ds.x[(k, jj)];
                }
            }
            WlsSpec::FullyInteracted => {
                for jj in 0..j {
                    c[(k, s + t * j + jj)] = ds.x[(k, jj)];
                }
            }
            _ => {}
        }
    }
    let w = (0..n).map(|k| 1.0 / ds.pi_realized(k)).collect();
    solve_weighted(spec, c, ds.y.clone(), w, ds)
}

/// HT-transformed fit: regress `Ỹ_i = 1̂_ht(T_i)·Y_i` on `z_i` with weights
/// `w̃_i = 1/(1̂_ht(T_i)·π_i(T_i))`.
pub fn fit_ht_wls(ds: &Dataset) -> Result<WlsFit> {
    let n = ds.n();
    let s = ds.support;
    let counts = ds.cell_counts();
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCell(ds.labels[t].clone()));
    }
    let one: Vec<f64> = (0..s).map(|t| ds.one_ht(t)).collect();
    let mut c = DMatrix::zeros(n, s);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for k in 0..n {
        let t = ds.t[k];
        c[(k, t)] = 1.0;
        y.push(one[t] * ds.y[k]);
        w.push(1.0 / (one[t] * ds.pi_realized(k)));
    }
    solve_weighted(WlsSpec::HtTransformed, c, y, w, ds)
}

/// Contrast matrix `G` with `|𝒯|` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl Contrast {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} contrast rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(w) = rows.first().map(Vec::len) {
            if rows.iter().any(|r| r.len() != w) {
                return Err(Error::Shape("contrast rows differ in length".into()));
            }
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("contrast entries must be finite".into()));
        }
        Ok(Contrast { rows, labels })
    }

    /// Single row `μ(a) − μ(b)`, labelled `tau(a,b)`.
    pub fn difference(support: usize, a: usize, b: usize, labels: &[String]) -> Self {
        let mut row = vec![0.0; support];
        row[a] += 1.0;
        row[b] -= 1.0;
        Contrast {
            rows: vec![row],
            labels: vec![format!("tau({},{})", labels[a], labels[b])],
        }
    }

    pub fn identity(labels: &[String]) -> Self {
        let s = labels.len();
        let rows = (0..s)
            .map(|t| (0..s).map(|u| (t == u) as u8 as f64).collect())
            .collect();
        Contrast {
            rows,
            labels: labels.iter().map(|l| format!("mu({l})")).collect(),
        }
    }

    /// Direct, spillover and interaction effects for the 2×2 factorial
    /// support `(0,0), (0,1), (1,0), (1,1)`.
    pub fn factorial_2x2() -> Self {
        Contrast {
            rows: vec![
                vec![-0.5, -0.5, 0.5, 0.5],
                vec![-0.5, 0.5, -0.5, 0.5],
                vec![0.5, -0.5, -0.5, 0.5],
            ],
            labels: vec!["direct".into(), "spillover".into(), "interaction".into()],
        }
    }

    pub fn ncols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.ncols(), |r, c| self.rows[r][c])
    }

    pub fn check_width(&self, support: usize) -> Result<()> {
        if self.ncols() != support {
            return Err(Error::Shape(format!(
                "contrast has {} columns, the exposure support has {support}",
                self.ncols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_width(beta.len())?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.iter().zip(beta).map(|(g, b)| g * b).sum())
            .collect())
    }
}

/// `τ̂ = G β̂` on the cell coefficients.
pub fn contrast_estimate(fit: &WlsFit, g: &Contrast) -> Result<Vec<f64>> {
    g.apply(fit.beta())
}

/// Local average `μ̂_h(t)` with a uniform window of half-width `h`.
pub fn continuous_mu_hat(
    y: &[f64],
    t: &[f64],
    window_prob: &[f64],
    at: f64,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "window half-width must be positive, got {h}"
        )));
    }
    if y.len() != t.len() || y.len() != window_prob.len() {
        return Err(Error::Shape(
            "outcome, exposure and window-probability lengths differ".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        if (t[i] - at).abs() <= h {
            let q = window_prob[i];
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Data(format!(
                    "unit {i}: window probability {q} is not in (0, 1]"
                )));
            }
            num += y[i] / q;
            den += 1.0 / q;
        }
    }
    if den == 0.0 {
        return Err(Error::EmptyWindow { t: at, h });
    }
    Ok(num / den)
}

/// Slope of `Y` on the centered exposure with weights `1/Var(T_i)`.
pub fn continuous_wls_slope(y: &[f64], t: &[f64], mean_t: &[f64], var_t: &[f64]) -> Result<f64> {
    let n = y.len();
    if t.len() != n || mean_t.len() != n || var_t.len() != n {
        return Err(Error::Shape("slope inputs differ in length".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        if !(var_t[i] > 0.0) {
            return Err(Error::ZeroVariance(i));
        }
        let c = t[i] - mean_t[i];
        num += c * y[i] / var_t[i];
        den += c * c / var_t[i];
    }
    if den == 0.0 {
        return Err(Error::Singular(
            "every exposure equals its expectation".into(),
        ));
    }
    Ok(num / den)
}

/// Probability mass function of a sum of independent Bernoulli(p_k).
pub fn poisson_binomial(p: &[f64]) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for &q in p {
        let mut next = vec![0.0; pmf.len() + 1];
        for (k, &m) in pmf.iter().enumerate() {
            next[k] += m * (1.0 - q);
            next[k + 1] += m * q;
        }
        pmf = next;
    }
    pmf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::PropensityMethod;

    fn table(rows: &[[f64; 2]]) -> PropensityTable {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        PropensityTable::new(rows.len(), 2, flat, PropensityMethod::Supplied).unwrap()
    }

    fn labels() -> Vec<String> {
        vec!["0".into(), "1".into()]
    }

    fn three_units() -> Dataset {
        let pi = table(&[[0.5, 0.5], [0.75, 0.25], [0.5, 0.5]]);
        Dataset::new(
            vec![0, 1, 2],
            vec![1.0, 3.0, 5.0],
            DMatrix::zeros(3, 0),
            vec![1, 1, 0],
            &pi,
            labels(),
        )
        .unwrap()
    }

    #[test]
    fn closed_forms_on_three_units() {
        let ds = three_units();
        assert!((hajek(&ds, 1).unwrap() - 7.0 / 3.0).abs() < 1e-15);
        assert!((horvitz_thompson(&ds, 1) - 14.0 / 3.0).abs() < 1e-15);
        let fit = fit_wls(&ds, WlsSpec::Unadjusted).unwrap();
        assert!((fit.beta()[1] - 7.0 / 3.0).abs() < 1e-14);
        let ht = fit_ht_wls(&ds).unwrap();
        assert!((ht.beta()[1] - 14.0 / 3.0).abs() < 1e-14);
        assert!((ht.beta()[0] - horvitz_thompson(&ds, 0)).abs() < 1e-14);
    }

    #[test]
    fn constant_outcome_and_contrasts() {
        let ds = three_units().with_outcomes(vec![2.5; 3]).unwrap();
        let fit = fit_wls(&ds, WlsSpec::Unadjusted).unwrap();
        assert!(fit.beta().iter().all(|b| (b - 2.5).abs() < 1e-14));
        let g = Contrast::difference(2, 1, 0, &labels());
        assert!(contrast_estimate(&fit, &g).unwrap()[0].abs() < 1e-14);
        assert_eq!(g.labels[0], "tau(1,0)");
        assert!(contrast_estimate(&fit, &Contrast::factorial_2x2()).is_err());
    }

    #[test]
    fn cell_errors_are_named() {
        let pi = table(&[[0.5, 0.5], [0.5, 0.5]]);
        let ds = Dataset::new(
            vec![0, 1],
            vec![0.0, 1.0],
            DMatrix::zeros(2, 0),
            vec![1, 1],
            &pi,
            labels(),
        )
        .unwrap();
        assert!(matches!(hajek(&ds, 0), Err(Error::EmptyCell(c)) if c == "0"));
        let pi = table(&[[0.5, 0.5]; 4]);
        let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 5.0, 0.0, 1.0, 0.0, 2.0]);
        let ds = Dataset::new(
            vec![0, 1, 2, 3],
            vec![1.0; 4],
            x,
            vec![0, 0, 1, 1],
            &pi,
            labels(),
        )
        .unwrap();
        let err = fit_wls(&ds, WlsSpec::FullyInteracted).unwrap_err();
        assert!(err.to_string().contains("t=0"), "{err}");
    }

    #[test]
    fn covariates_are_centered() {
        let pi = table(&[[0.5, 0.5]; 3]);
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 6.0]);
        let ds =
            Dataset::new(vec![0, 1, 2], vec![1.0; 3], x, vec![0, 1, 1], &pi, labels()).unwrap();
        assert!(ds.x().column(0).sum().abs() < 1e-14);
    }

    #[test]
    fn zero_propensity_is_rejected() {
        let pi = table(&[[1.0, 0.0]]);
        assert!(Dataset::new(
            vec![4],
            vec![1.0],
            DMatrix::zeros(1, 0),
            vec![0],
            &pi,
            labels()
        )
        .is_err());
    }

    #[test]
    fn continuous_estimators() {
        let y = [1.0, 2.0, 6.0];
        let t = [0.1, 0.2, 0.3];
        assert!((continuous_mu_hat(&y, &t, &[0.4; 3], 0.2, 1.0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(
            continuous_mu_hat(&y, &t, &[0.4; 3], 0.1, 0.01).unwrap(),
            1.0
        );
        assert!(matches!(
            continuous_mu_hat(&y, &t, &[0.4; 3], 9.0, 0.1),
            Err(Error::EmptyWindow { .. })
        ));
        let s = continuous_wls_slope(&[2.0, 4.0], &[1.0, 2.0], &[1.5, 1.5], &[0.25, 0.25]).unwrap();
        assert!((s - 2.0).abs() < 1e-15);
        assert!(matches!(
            continuous_wls_slope(&[1.0], &[1.0], &[1.0], &[0.0]),
            Err(Error::ZeroVariance(0))
        ));
        let pmf = poisson_binomial(&[0.5, 0.5]);
        assert_eq!(pmf, vec![0.25, 0.5, 0.25]);
    }
}
