use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use netexp::covariance::{
    bandwidth_select, build_kernel, contrast_se, ehw_cov, hac_cov, hac_cov_plus, leung_ht_variance,
    leung_ht_variance_plus, leung_se, psd_split_with, BandwidthChoice, DEFAULT_EIGEN_TOL,
    DEFAULT_SIZE_CAP,
};
use netexp::design::{
    exact_propensity, mc_propensity, PropensityMethod, PropensityTable, DEFAULT_MC_DRAWS,
};
use netexp::diagnostics::{default_grid, diagnose_with, DiagnosticsReport};
use netexp::estimate::{fit_wls, Contrast, Dataset, WlsSpec};
use netexp::exposure::{effective_sample, ExposureEvaluator, ExposureMapping};
use netexp::graph::{average_degree, average_path_length, DegreeView, Graph};
use netexp::io::{build_design, read_edges, read_nodes, NodeTable};
use netexp::simulate::{ht_delta, run_monte_carlo};
use netexp::Error;
use serde::Serialize;

use crate::config::{config_err, BandwidthSpec, PropensityChoice, RunConfig};

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::File {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| Error::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).context("serializing output")?;
    s.push('\n');
    write(dir, name, &s)
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).context("writing csv")?;
    for r in rows {
        w.write_record(r).context("writing csv")?;
    }
    Ok(String::from_utf8(w.into_inner().context("writing csv")?).expect("utf-8"))
}

fn fmt(v: f64) -> String {
    v.to_string()
}

struct Inputs {
    graph: Arc<Graph>,
    nodes: NodeTable,
    mapping: ExposureMapping,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let nodes_path = cfg.require(&cfg.nodes, "nodes")?;
    let edges_path = cfg.require(&cfg.edges, "edges")?;
    let nodes = read_nodes(nodes_path)?;
    let (graph, _) = read_edges(edges_path, Some(nodes.n()), cfg.directed)?;
    let mapping = cfg.require(&cfg.exposure, "exposure")?.clone();
    Ok(Inputs {
        graph: Arc::new(graph),
        nodes,
        mapping,
    })
}

fn compute_propensity(cfg: &RunConfig, inp: &Inputs) -> Result<PropensityTable> {
    let design = build_design(cfg.require(&cfg.design, "design")?, &inp.nodes, &inp.graph)?;
    let draws = cfg.mc_draws.unwrap_or(DEFAULT_MC_DRAWS);
    let mc = || -> Result<PropensityTable> {
        let seed = cfg.require_seed("Monte-Carlo propensity estimation")?;
        Ok(mc_propensity(
            &inp.mapping,
            &design,
            &inp.graph,
            draws,
            seed,
        )?)
    };
    match cfg.propensity {
        PropensityChoice::MonteCarlo => mc(),
        PropensityChoice::Auto => match exact_propensity(&inp.mapping, &design, &inp.graph) {
            Err(Error::UnsupportedPropensity { .. }) => {
                log::info!("no closed form for this mapping and design; estimating by Monte Carlo");
                mc()
            }
            other => Ok(other?),
        },
    }
}

#[derive(Serialize)]
struct PropensityReport {
    n: usize,
    n_effective: usize,
    labels: Vec<String>,
    method: PropensityMethod,
    expected_counts: Vec<f64>,
}

pub fn propensity(cfg: &RunConfig) -> Result<()> {
    let inp = load_inputs(cfg)?;
    let pi = compute_propensity(cfg, &inp)?;
    let sample = effective_sample(&inp.mapping, &pi)?;
    let labels = inp.mapping.labels();
    let mut header = vec!["id".to_string()];
    header.extend(labels.iter().map(|l| format!("pi_{l}")));
    if pi.mc_std_err.is_some() {
        header.extend(labels.iter().map(|l| format!("se_{l}")));
    }
    header.push("effective".into());
    let mut in_sample = vec![false; pi.n()];
    for &i in &sample.units {
        in_sample[i] = true;
    }
    let rows: Vec<Vec<String>> = (0..pi.n())
        .map(|i| {
            let mut r = vec![i.to_string()];
            r.extend(pi.row(i).iter().map(|&v| fmt(v)));
            if pi.mc_std_err.is_some() {
                r.extend((0..pi.support()).map(|t| fmt(pi.std_err(i, t).unwrap_or(f64::NAN))));
            }
            r.push((in_sample[i] as u8).to_string());
            r
        })
        .collect();
    write(
        &cfg.output_dir,
        "propensity.csv",
        &csv_text(&header, &rows)?,
    )?;
    let rep = PropensityReport {
        n: pi.n(),
        n_effective: sample.len(),
        labels,
        method: pi.method.clone(),
        expected_counts: sample.expected_counts.clone(),
    };
    write_json(&cfg.output_dir, "propensity.json", &rep)
}

#[derive(Debug, Serialize)]
pub struct ContrastRow {
    pub label: String,
    pub estimate: f64,
    pub wls_se: f64,
    pub wls_plus_se: f64,
    pub ehw_se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leung_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leung_plus_se: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BandwidthBlock {
    pub b: u32,
    pub kernel_psd: bool,
    pub contrasts: Vec<ContrastRow>,
}

#[derive(Debug, Serialize)]
pub struct SpecReport {
    pub spec: WlsSpec,
    pub name: &'static str,
    pub beta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    pub bandwidths: Vec<BandwidthBlock>,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub n: usize,
    pub n_effective: usize,
    pub labels: Vec<String>,
    pub cell_counts: Vec<usize>,
    pub propensity_method: PropensityMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suggested_bandwidth: Option<BandwidthChoice>,
    pub grid: Vec<u32>,
    pub contrast: Contrast,
    pub specs: Vec<SpecReport>,
}

fn default_contrast(labels: &[String]) -> Contrast {
    if labels.len() == 2 {
        Contrast::difference(2, 1, 0, labels)
    } else {
        Contrast::identity(labels)
    }
}

fn build_dataset(inp: &Inputs, pi: &PropensityTable, units: &[usize]) -> Result<Dataset> {
    let d = inp.nodes.require_d()?;
    let y = inp.nodes.require_y()?;
    let t = ExposureEvaluator::new(&inp.mapping, &inp.graph)
        .evaluate(d)
        .map_err(|e| match e {
            Error::ArmOutOfRange { unit, arm, arms } => Error::File {
                path: inp.nodes.path.clone(),
                message: format!("column \"D\" for unit {unit}: arm {arm} is outside 0..{arms}"),
            },
            other => other,
        })?;
    let j = inp.nodes.covariate_names.len();
    let x = nalgebra::DMatrix::from_fn(units.len(), j, |r, c| inp.nodes.x[units[r]][c]);
    Ok(Dataset::new(
        units.to_vec(),
        units.iter().map(|&i| y[i]).collect(),
        x,
        units.iter().map(|&i| t[i]).collect(),
        &pi.restrict(units),
        inp.mapping.labels(),
    )?)
}

pub fn analyze_report(cfg: &RunConfig) -> Result<AnalyzeReport> {
    let inp = load_inputs(cfg)?;
    let pi = compute_propensity(cfg, &inp)?;
    let sample = effective_sample(&inp.mapping, &pi)?;
    let ds = build_dataset(&inp, &pi, &sample.units)?;
    let labels = inp.mapping.labels();
    let g = match &cfg.contrast {
        Some(c) => c.resolve()?,
        None => default_contrast(&labels),
    };
    g.check_width(labels.len())?;
    let (suggested, grid) = match &cfg.bandwidth {
        BandwidthSpec::Auto => {
            let apl = average_path_length(&inp.graph);
            let deg = average_degree(&inp.graph, DegreeView::Out);
            let choice = bandwidth_select(apl, inp.graph.n(), deg, inp.mapping.locality());
            let grid = (0..=choice.b + 1).collect();
            (Some(choice), grid)
        }
        BandwidthSpec::One(b) => (None, vec![*b]),
        BandwidthSpec::Grid(v) => (None, v.clone()),
    };
    let cap = cfg.size_cap.unwrap_or(DEFAULT_SIZE_CAP);
    let kernels = grid
        .iter()
        .map(|&b| {
            let k = build_kernel(&inp.graph, &sample.units, b)?;
            let s = psd_split_with(&k, DEFAULT_EIGEN_TOL, cap)?;
            Ok((b, k, s))
        })
        .collect::<netexp::Result<Vec<_>>>()?;
    let mut specs = Vec::new();
    for spec in cfg.specs() {
        let fit = fit_wls(&ds, spec)?;
        let est = g.apply(fit.beta())?;
        let sub = fit.nparams() > fit.support;
        let ehw = contrast_se(&ehw_cov(&fit, sub), &g)?;
        let mut bandwidths = Vec::new();
        for (b, k, split) in &kernels {
            let raw = contrast_se(&hac_cov(&fit, k, sub)?, &g)?;
            let plus = contrast_se(&hac_cov_plus(&fit, &split, sub)?, &g)?;
            let contrasts = (0..g.rows.len())
                .map(|r| {
                    let (leung_se_raw, leung_se_plus) = if spec == WlsSpec::HtTransformed {
                        let delta = ht_delta(&ds, &g.rows[r]);
                        let tau = delta.iter().sum::<f64>() / delta.len() as f64;
                        (
                            Some(leung_se(leung_ht_variance(&delta, tau, k)?, ds.n())),
                            Some(leung_se(
                                leung_ht_variance_plus(&delta, tau, &split)?,
                                ds.n(),
                            )),
                        )
                    } else {
                        (None, None)
                    };
                    Ok(ContrastRow {
                        label: g.labels[r].clone(),
                        estimate: est[r],
                        wls_se: raw[r].se,
                        wls_plus_se: plus[r].se,
                        ehw_se: ehw[r].se,
                        leung_se: leung_se_raw,
                        leung_plus_se: leung_se_plus,
                    })
                })
                .collect::<netexp::Result<Vec<_>>>()?;
            bandwidths.push(BandwidthBlock {
                b: *b,
                kernel_psd: split.kernel_psd(),
                contrasts,
            });
        }
        specs.push(SpecReport {
            spec,
            name: spec.short_name(),
            beta: fit.beta().to_vec(),
            gamma: fit.gamma().map(<[f64]>::to_vec),
            bandwidths,
        });
    }
    Ok(AnalyzeReport {
        n: inp.graph.n(),
        n_effective: ds.n(),
        labels,
        cell_counts: ds.cell_counts(),
        propensity_method: pi.method.clone(),
        suggested_bandwidth: suggested,
        grid,
        contrast: g,
        specs,
    })
}

/// Table rows `Estimate`, `EHW SE`, then `b_n=k` with a `WLS+ SE` row after
/// every bandwidth whose kernel is not PSD. Columns are contrast × spec, with
/// a Leung column next to the HT spec.
pub fn analyze_table(rep: &AnalyzeReport) -> Result<String> {
    let mut header = vec!["row".to_string()];
    let mut cols: Vec<(usize, usize, bool)> = Vec::new();
    for (r, label) in rep.contrast.labels.iter().enumerate() {
        for (s, spec) in rep.specs.iter().enumerate() {
            header.push(format!("{label}:{}", spec.name));
            cols.push((r, s, false));
            if spec.spec == WlsSpec::HtTransformed {
                header.push(format!("{label}:Leung"));
                cols.push((r, s, true));
            }
        }
    }
    let cell = |f: &dyn Fn(&ContrastRow, bool) -> Option<f64>, bi: usize| -> Vec<String> {
        cols.iter()
            .map(|&(r, s, leung)| {
                f(&rep.specs[s].bandwidths[bi].contrasts[r], leung)
                    .map(fmt)
                    .unwrap_or_default()
            })
            .collect()
    };
    let mut rows = Vec::new();
    if rep.grid.is_empty() {
        return csv_text(&header, &rows);
    }
    let mut push = |name: String, vals: Vec<String>| {
        let mut row = vec![name];
        row.extend(vals);
        rows.push(row);
    };
    push("Estimate".into(), cell(&|c, _| Some(c.estimate), 0));
    push(
        "EHW SE".into(),
        cell(&|c, leung| (!leung).then_some(c.ehw_se), 0),
    );
    for (bi, &b) in rep.grid.iter().enumerate() {
        push(
            format!("b_n={b}"),
            cell(
                &|c, leung| if leung { c.leung_se } else { Some(c.wls_se) },
                bi,
            ),
        );
        let psd = rep
            .specs
            .first()
            .is_none_or(|s| s.bandwidths[bi].kernel_psd);
        if !psd {
            push(
                "WLS+ SE".into(),
                cell(&|c, leung| (!leung).then_some(c.wls_plus_se), bi),
            );
        }
    }
    csv_text(&header, &rows)
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    let rep = analyze_report(cfg)?;
    write_json(&cfg.output_dir, "analyze.json", &rep)?;
    write(&cfg.output_dir, "analyze.csv", &analyze_table(&rep)?)
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| config_err("simulate needs a \"simulation\" block or a preset"))?;
    let res = run_monte_carlo(sim)?;
    #[derive(Serialize)]
    struct Out<'a> {
        config: &'a netexp::simulate::SimConfig,
        result: &'a netexp::simulate::SimResult,
    }
    write_json(
        &cfg.output_dir,
        "simulate.json",
        &Out {
            config: sim,
            result: &res,
        },
    )?;
    write(&cfg.output_dir, "simulate.csv", &res.to_table_csv()?)?;
    write(&cfg.output_dir, "simulate_long.csv", &res.to_csv()?)
}

pub fn diagnostics_table(rep: &DiagnosticsReport) -> Result<String> {
    let header: Vec<String> = [
        "b",
        "m_1",
        "m_minus_1",
        "m_minus_2",
        "max_j_minus",
        "min_eigenvalue",
        "kernel_psd",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.b.to_string(),
                fmt(r.m_1),
                fmt(r.m_minus_1),
                fmt(r.m_minus_2),
                fmt(r.max_j_minus),
                fmt(r.min_eigenvalue),
                r.kernel_psd.to_string(),
            ]
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn diagnose(cfg: &RunConfig) -> Result<()> {
    let edges = cfg.require(&cfg.edges, "edges")?;
    let n = match &cfg.nodes {
        Some(p) => Some(read_nodes(p)?.n()),
        None => None,
    };
    let (g, _) = read_edges(edges, n, cfg.directed)?;
    let grid = match &cfg.grid {
        Some(g) => g.resolve()?,
        None => default_grid(),
    };
    let rep = diagnose_with(&g, &grid, cfg.size_cap.unwrap_or(DEFAULT_SIZE_CAP))?;
    write_json(&cfg.output_dir, "diagnostics.json", &rep)?;
    write(
        &cfg.output_dir,
        "diagnostics.csv",
        &diagnostics_table(&rep)?,
    )
}
