//! Subcommand bodies: each writes its CSV files and returns a summary for the
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pamlab::oracle::{asymptotic_var, var_avg, AvgVarianceQuery};
use pamlab::specfun::theta;
use pamlab::stats::{
    ergodic_from_ensemble, fdd_from_ensemble, roughness_check, simulate_averages, sweep_from_ensemble, Ensemble,
};
use pamlab::verify::identity_suite;
use serde_json::{json, Value};

use crate::config::{Plan, Subcommand};

/// Why a run stopped early.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or request, exit 2.
    Config(String),
    /// Numerical trouble, exit 3.
    Numerical(String),
}

impl From<pamlab::Error> for Failure {
    fn from(e: pamlab::Error) -> Self {
        match e {
            pamlab::Error::Argument(_) | pamlab::Error::Domain(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

/// What a finished run reports.
pub struct Outcome {
    pub pass: Option<bool>,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

/// Float in CSV and tables: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: &[String], outputs: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
    outputs.push(path);
    Ok(())
}

fn tag(n: f64) -> String {
    format!("{n}")
}

fn ensemble(plan: &Plan) -> Result<Ensemble, Failure> {
    let c = &plan.cfg;
    Ok(simulate_averages(
        c.field_kind,
        &plan.ns,
        &plan.ts,
        plan.replicas,
        plan.seed,
        &c.resolution,
    )?)
}

fn solver_summary(ens: &Ensemble) -> Value {
    json!({ "negative_cells": ens.negative_cells, "cells": ens.cells })
}

pub fn run(plan: &Plan) -> Result<Outcome, Failure> {
    let dir = plan.cfg.output_dir.clone();
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Config(format!("output_dir: cannot create {}: {e}", dir.display())))?;
    let quad = plan.cfg.quad;
    let kind = plan.cfg.field_kind;
    let mut outputs = Vec::new();
    match plan.sub {
        Subcommand::Verify => {
            let checks = identity_suite(quad);
            for c in &checks {
                println!(
                    "{} {} measured={} threshold={} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    num(c.measured),
                    num(c.threshold),
                    c.detail
                );
            }
            let rows: Vec<String> = checks
                .iter()
                .map(|c| format!("{},{},{},{}", c.name, c.passed, num(c.measured), num(c.threshold)))
                .collect();
            write_csv(
                &dir,
                "verify.csv",
                "check,passed,measured,threshold",
                &rows,
                &mut outputs,
            )?;
            let pass = checks.iter().all(|c| c.passed);
            Ok(Outcome {
                pass: Some(pass),
                outputs,
                summary: json!({ "checks": checks }),
            })
        }
        Subcommand::Oracle => {
            let mut rows = Vec::new();
            for &n in &plan.ns {
                for &t in &plan.ts {
                    let v = var_avg(AvgVarianceQuery::new(n, t, kind)?, quad)?;
                    let row = format!(
                        "{},{},{},{},{},{}",
                        num(n),
                        num(t),
                        num(v),
                        num(v / asymptotic_var(n, t)),
                        num(asymptotic_var(n, t)),
                        num(theta(t)?)
                    );
                    println!("{row}");
                    rows.push(row);
                }
            }
            write_csv(
                &dir,
                "oracle.csv",
                "N,t,var_avg,var_ratio,asymptotic_var,theta",
                &rows,
                &mut outputs,
            )?;
            Ok(Outcome {
                pass: None,
                outputs,
                summary: json!({ "field_kind": kind }),
            })
        }
        Subcommand::Simulate => {
            let ens = ensemble(plan)?;
            for (ni, &n) in ens.ns.iter().enumerate() {
                let mut rows = Vec::with_capacity(ens.replicas() * ens.times.len());
                for p in &ens.paths[ni] {
                    for (t, s) in p.times.iter().zip(&p.values) {
                        rows.push(format!("{},{},{}", p.replica_id, num(*t), num(*s)));
                    }
                }
                write_csv(
                    &dir,
                    &format!("simulate_N{}.csv", tag(n)),
                    "replica,t,S",
                    &rows,
                    &mut outputs,
                )?;
            }
            Ok(Outcome {
                pass: None,
                outputs,
                summary: solver_summary(&ens),
            })
        }
        Subcommand::Clt => {
            let ens = ensemble(plan)?;
            let mut rows = Vec::new();
            let mut sweeps = Vec::new();
            for &t in &plan.ts {
                let s = sweep_from_ensemble(&ens, t, quad)?;
                for i in 0..s.ns.len() {
                    rows.push(format!(
                        "{},{},{},{},{},{},{},{}",
                        num(s.ns[i]),
                        num(t),
                        s.replicas,
                        num(s.var_ratio[i]),
                        num(s.var_ratio_se[i]),
                        num(s.oracle_ratio[i]),
                        num(s.ks[i]),
                        num(s.ks_critical_1pct[i])
                    ));
                }
                sweeps.push(s);
            }
            write_csv(
                &dir,
                "clt.csv",
                "N,t,replicas,emp_var_ratio,emp_var_se,oracle_var_ratio,ks_stat,ks_crit_1pct",
                &rows,
                &mut outputs,
            )?;
            Ok(Outcome {
                pass: None,
                outputs,
                summary: json!({ "solver": solver_summary(&ens), "sweeps": sweeps }),
            })
        }
        Subcommand::Fdd => {
            let ens = ensemble(plan)?;
            let mut results = Vec::new();
            for (ni, &n) in ens.ns.iter().enumerate() {
                let f = fdd_from_ensemble(&ens, ni, quad)?;
                let rows: Vec<String> = f
                    .entries
                    .iter()
                    .map(|e| {
                        format!(
                            "{},{},{},{},{},{}",
                            num(e.t_i),
                            num(e.t_j),
                            num(e.emp_scaled_cov),
                            num(e.se),
                            num(e.oracle_scaled_cov),
                            num(e.limit_2min)
                        )
                    })
                    .collect();
                write_csv(
                    &dir,
                    &format!("fdd_N{}.csv", tag(n)),
                    "t_i,t_j,emp_scaled_cov,se,oracle_scaled_cov,limit_2min",
                    &rows,
                    &mut outputs,
                )?;
                results.push(f);
            }
            Ok(Outcome {
                pass: None,
                outputs,
                summary: json!({ "solver": solver_summary(&ens), "matrices": results }),
            })
        }
        Subcommand::Ergodic => {
            let ens = ensemble(plan)?;
            let mut rows = Vec::new();
            for &t in &plan.ts {
                for r in ergodic_from_ensemble(&ens, t, &plan.cfg.resolution, quad)? {
                    let mut line = String::new();
                    let scheme = r.scheme_rms.map(num).unwrap_or_default();
                    write!(
                        line,
                        "{},{},{},{},{},{},{},{}",
                        num(r.n),
                        num(r.t),
                        ens.replicas(),
                        num(r.rms),
                        num(r.rms_se),
                        num(r.oracle_rms),
                        scheme,
                        num(r.bound_constant)
                    )
                    .expect("writing to a String");
                    rows.push(line);
                }
            }
            write_csv(
                &dir,
                "ergodic.csv",
                "N,t,replicas,rms,rms_se,oracle_rms,scheme_rms,bound_constant",
                &rows,
                &mut outputs,
            )?;
            Ok(Outcome {
                pass: None,
                outputs,
                summary: json!({ "solver": solver_summary(&ens) }),
            })
        }
        Subcommand::Local => {
            let ens = ensemble(plan)?;
            let mut rows = Vec::new();
            for ni in 0..ens.ns.len() {
                for r in roughness_check(&ens, ni, &plan.ts, plan.seed, quad)? {
                    rows.push(format!(
                        "{},{},{},{},{},{},{},{},{},{}",
                        num(r.n),
                        num(r.t),
                        ens.replicas(),
                        num(r.mean),
                        num(r.mean_se),
                        num(r.oracle_mean),
                        num(r.pz_fraction),
                        num(r.pz_fraction_se),
                        num(r.pz_bound),
                        num(r.pz_bound_se)
                    ));
                }
            }
            write_csv(
                &dir,
                "local.csv",
                "N,t,replicas,mean_R,mean_R_se,oracle_mean_R,pz_fraction,pz_fraction_se,pz_bound,pz_bound_se",
                &rows,
                &mut outputs,
            )?;
            Ok(Outcome {
                pass: None,
                outputs,
                summary: json!({ "solver": solver_summary(&ens) }),
            })
        }
    }
}
