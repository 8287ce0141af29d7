//! CSV and plot writers. Floats use the shortest round-trip representation.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cone_ke::audit::{AuditEntry, AuditReport};
use cone_ke::energy::FunctionalReport;
use cone_ke::State;

use crate::CliError;

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// A CSV file written row by row and flushed after each row.
pub struct CsvSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[String]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut sink = CsvSink { path: path.to_path_buf(), out: BufWriter::new(file) };
        sink.row(header)?;
        Ok(sink)
    }

    /// Appends to an existing file; the header is assumed present.
    pub fn append(path: &Path) -> Result<Self, CliError> {
        let file = OpenOptions::new().append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(CsvSink { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        let line = fields.join(",");
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| io_err(&self.path, e))
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

fn mu_label(m: f64) -> String {
    format!("E_modified_{m}")
}

pub fn trace_header(n_angles: usize, mu_primes: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "eps", "t"].iter().map(|s| s.to_string()).collect();
    h.extend((0..n_angles).map(|i| format!("beta_{i}")));
    h.extend(["I", "J", "J_omega0", "E", "E_logD_eps"].iter().map(|s| s.to_string()));
    h.extend(mu_primes.iter().map(|&m| mu_label(m)));
    h.extend(["osc", "sup_norm", "min_density", "lambda1", "newton_iters"].iter().map(|s| s.to_string()));
    h
}

pub fn trace_row(run_id: &str, s: &State, lambda1: Option<f64>) -> Vec<String> {
    let r = &s.report;
    let mut v = vec![run_id.to_string(), num(s.eps), num(s.t)];
    v.extend(s.angles.iter().map(|&b| num(b)));
    v.extend([r.i, r.j, r.j_omega0, r.e, r.e_log_d_eps].into_iter().map(num));
    v.extend(r.e_modified.iter().map(|&x| num(x)));
    v.extend([s.osc, s.sup_norm, s.min_density, lambda1.unwrap_or(f64::NAN)].into_iter().map(num));
    v.push(s.newton_iterations.to_string());
    v
}

pub fn audit_header() -> Vec<String> {
    ["run_id", "eps", "t", "check", "relation", "measured", "bound", "tolerance", "passed"].iter().map(|s| s.to_string()).collect()
}

pub fn audit_row(run_id: &str, eps: f64, t: f64, e: &AuditEntry) -> Vec<String> {
    vec![
        run_id.to_string(),
        num(eps),
        num(t),
        e.name.clone(),
        e.relation.to_string(),
        num(e.measured),
        num(e.bound),
        num(e.tolerance),
        e.passed.to_string(),
    ]
}

pub fn audit_rows(run_id: &str, eps: f64, t: f64, report: &AuditReport) -> Vec<Vec<String>> {
    report.entries.iter().map(|e| audit_row(run_id, eps, t, e)).collect()
}

pub fn functional_header(n_angles: usize, mu_primes: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "eps", "t"].iter().map(|s| s.to_string()).collect();
    h.extend((0..n_angles).map(|i| format!("beta_{i}")));
    h.extend(["I", "J", "J_omega0", "E", "E_logD", "E_logD_eps", "J_omega_phi_eps"].iter().map(|s| s.to_string()));
    h.extend((0..n_angles).map(|i| format!("J_chi_eps_{i}")));
    for &m in mu_primes {
        h.push(mu_label(m));
        h.push(format!("C_{m}"));
    }
    h
}

pub fn functional_row(run_id: &str, t: f64, r: &FunctionalReport<f64>) -> Vec<String> {
    let mut v = vec![run_id.to_string(), num(r.eps), num(t)];
    v.extend(r.angles.iter().map(|&b| num(b)));
    v.extend([r.i, r.j, r.j_omega0, r.e, r.e_log_d, r.e_log_d_eps, r.j_omega_phi_eps].into_iter().map(num));
    v.extend(r.j_chi_eps.iter().map(|&x| num(x)));
    for (&e, &c) in r.e_modified.iter().zip(&r.coercivity_c) {
        v.push(num(e));
        v.push(num(c));
    }
    v
}

/// Columns: s, phi, rho_phi / rho0, potential.
pub fn write_plot(path: &Path, s: &State) -> Result<(), CliError> {
    let phi = s.potential.field();
    let grid = phi.grid();
    let rho = s.potential.density();
    let mut out = String::from("# s phi rho_ratio potential\n");
    for i in 0..grid.len() {
        let ratio = rho.values()[i] / grid.rho0_at(i);
        out.push_str(&format!("{} {} {} {}\n", grid.s_at(i), grid.phi_at(i), ratio, phi.values()[i]));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Concatenates per-cell files under one header, in the given order.
pub fn merge_csv(out: &Path, parts: &[PathBuf]) -> Result<(), CliError> {
    let mut text = String::new();
    for (k, p) in parts.iter().enumerate() {
        let body = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if k == 0 {
            text.push_str(header);
            text.push('\n');
        }
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
    }
    std::fs::write(out, text).map_err(|e| io_err(out, e))
}
