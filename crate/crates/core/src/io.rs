//! File formats: coefficient JSON and grid or report CSV.
//!
//! Floats are written with 17 significant digits so every value reads back
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuation::GraphPair;
use crate::grid::SphereGrid;
use crate::harmonics::{coeff_len, ScalarCoeffs};
use crate::hardy::VectorFieldCoeffs;
use crate::{Error, Result};

pub const BASIS_TAG: &str = "real-orthonormal-sh";
pub const LAYOUT_TAG: &str = "n-major,m=-n..n";

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Serialize, Deserialize)]
struct CoeffFile {
    basis: String,
    nmax: usize,
    layout: String,
    values: Vec<f64>,
}

fn coeffs_from(nmax: usize, values: Vec<f64>, what: &str) -> Result<ScalarCoeffs> {
    if values.len() != coeff_len(nmax) {
        return Err(Error::Parse(format!(
            "{what}: {} values do not match nmax {nmax}",
            values.len()
        )));
    }
    ScalarCoeffs::from_values(nmax, values)
}

pub fn coeffs_to_json(f: &ScalarCoeffs) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CoeffFile {
        basis: BASIS_TAG.into(),
        nmax: f.nmax(),
        layout: LAYOUT_TAG.into(),
        values: f.values().to_vec(),
    })?)
}

pub fn coeffs_from_json(text: &str) -> Result<ScalarCoeffs> {
    let file: CoeffFile = serde_json::from_str(text)?;
    if file.basis != BASIS_TAG || file.layout != LAYOUT_TAG {
        return Err(Error::Parse(format!(
            "unsupported basis {:?} or layout {:?}",
            file.basis, file.layout
        )));
    }
    coeffs_from(file.nmax, file.values, "coefficient file")
}

pub fn write_coeffs(path: &Path, f: &ScalarCoeffs) -> Result<()> {
    std::fs::write(path, coeffs_to_json(f)?)?;
    Ok(())
}

pub fn read_coeffs(path: &Path) -> Result<ScalarCoeffs> {
    coeffs_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct VectorFile {
    nmax: usize,
    phi: Vec<f64>,
    psi: Vec<f64>,
    chi: Vec<f64>,
}

pub fn vector_to_json(v: &VectorFieldCoeffs) -> Result<String> {
    Ok(serde_json::to_string_pretty(&VectorFile {
        nmax: v.nmax(),
        phi: v.phi.values().to_vec(),
        psi: v.psi.values().to_vec(),
        chi: v.chi.values().to_vec(),
    })?)
}

pub fn vector_from_json(text: &str) -> Result<VectorFieldCoeffs> {
    let f: VectorFile = serde_json::from_str(text)?;
    VectorFieldCoeffs::new(
        coeffs_from(f.nmax, f.phi, "phi")?,
        coeffs_from(f.nmax, f.psi, "psi")?,
        coeffs_from(f.nmax, f.chi, "chi")?,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct PairFile {
    basis: String,
    nmax: usize,
    layout: String,
    phi: Vec<f64>,
    psi: Vec<f64>,
    g: Vec<f64>,
    locality_residual: f64,
    divfree_residual: f64,
}

pub fn pair_to_json(p: &GraphPair) -> Result<String> {
    Ok(serde_json::to_string_pretty(&PairFile {
        basis: BASIS_TAG.into(),
        nmax: p.phi.nmax(),
        layout: LAYOUT_TAG.into(),
        phi: p.phi.values().to_vec(),
        psi: p.psi.values().to_vec(),
        g: p.g.values().to_vec(),
        locality_residual: p.locality_residual,
        divfree_residual: p.divfree_residual,
    })?)
}

pub fn pair_from_json(text: &str) -> Result<GraphPair> {
    let f: PairFile = serde_json::from_str(text)?;
    Ok(GraphPair {
        phi: coeffs_from(f.nmax, f.phi, "phi")?,
        psi: coeffs_from(f.nmax, f.psi, "psi")?,
        g: coeffs_from(f.nmax, f.g, "g")?,
        locality_residual: f.locality_residual,
        divfree_residual: f.divfree_residual,
    })
}

/// A CSV table held as header plus rows of preformatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_csv()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Column `name` parsed as floats.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
        self.rows
            .iter()
            .map(|r| r[k].parse::<f64>().map_err(|e| Error::Parse(format!("{name}: {e}"))))
            .collect()
    }
}

/// Scalar samples on a grid, `theta,phi,value`, theta-major.
pub fn scalar_grid_table(grid: &SphereGrid, values: &[f64]) -> Table {
    let mut t = Table::new(&["theta", "phi", "value"]);
    for (node, v) in grid.nodes().iter().zip(values) {
        t.push(vec![fmt_f64(node.theta), fmt_f64(node.phi), fmt_f64(*v)]);
    }
    t
}

/// Vector samples on a grid, `theta,phi,vx,vy,vz`, theta-major.
pub fn vector_grid_table(grid: &SphereGrid, values: &[[f64; 3]]) -> Table {
    let mut t = Table::new(&["theta", "phi", "vx", "vy", "vz"]);
    for (node, v) in grid.nodes().iter().zip(values) {
        t.push(vec![
            fmt_f64(node.theta),
            fmt_f64(node.phi),
            fmt_f64(v[0]),
            fmt_f64(v[1]),
            fmt_f64(v[2]),
        ]);
    }
    t
}

/// Read a vector field file and rebuild its grid from the sample angles.
pub fn read_vector_grid(path: &Path) -> Result<(SphereGrid, Vec<[f64; 3]>)> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["theta", "phi", "vx", "vy", "vz"] {
        return Err(Error::Parse(format!("expected header theta,phi,vx,vy,vz, got {}", header.join(","))));
    }
    let mut angles = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        angles.push((x[0], x[1]));
        values.push([x[2], x[3], x[4]]);
    }
    let grid = SphereGrid::from_sample_angles(&angles)?;
    Ok((grid, values))
}

/// One line of a solver report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub case: String,
    pub c: f64,
    pub gamma_or_lambda: f64,
    pub saturated: bool,
    pub objective: f64,
    pub residual: f64,
    pub bound: f64,
    pub empirical_error: f64,
}

pub const REPORT_HEADER: [&str; 8] = [
    "case",
    "c",
    "gamma_or_lambda",
    "saturated",
    "objective",
    "residual",
    "bound",
    "empirical_error",
];

pub fn report_table(rows: &[ReportRow]) -> Table {
    let mut t = Table::new(&REPORT_HEADER);
    for r in rows {
        t.push(vec![
            r.case.clone(),
            fmt_f64(r.c),
            fmt_f64(r.gamma_or_lambda),
            r.saturated.to_string(),
            fmt_f64(r.objective),
            fmt_f64(r.residual),
            fmt_f64(r.bound),
            fmt_f64(r.empirical_error),
        ]);
    }
    t
}

pub fn parse_report(t: &Table) -> Result<Vec<ReportRow>> {
    if t.header != REPORT_HEADER {
        return Err(Error::Parse("not a solver report".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
    t.rows
        .iter()
        .map(|r| {
            Ok(ReportRow {
                case: r[0].clone(),
                c: num(&r[1])?,
                gamma_or_lambda: num(&r[2])?,
                saturated: r[3].parse().map_err(|_| Error::Parse(format!("flag {}", r[3])))?,
                objective: num(&r[4])?,
                residual: num(&r[5])?,
                bound: num(&r[6])?,
                empirical_error: num(&r[7])?,
            })
        })
        .collect()
}

/// Singular values as `ntrial,ntest,theta_c,index,sigma`.
pub fn spectrum_table(n_trial: usize, n_test: usize, theta_c: f64, sigma: &[f64]) -> Table {
    let mut t = Table::new(&["ntrial", "ntest", "theta_c", "index", "sigma"]);
    for (k, s) in sigma.iter().enumerate() {
        t.push(vec![
            n_trial.to_string(),
            n_test.to_string(),
            fmt_f64(theta_c),
            k.to_string(),
            fmt_f64(*s),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn coeff_json_round_trip() {
        let f = ScalarCoeffs::from_values(2, (0..9).map(|k| (k as f64).sqrt() / 7.0).collect()).unwrap();
        let text = coeffs_to_json(&f).unwrap();
        assert!(text.contains("real-orthonormal-sh"));
        assert_eq!(coeffs_from_json(&text).unwrap(), f);
    }

    #[test]
    fn coeff_json_rejects_bad_length() {
        let text = r#"{"basis":"real-orthonormal-sh","nmax":2,"layout":"n-major,m=-n..n","values":[1,2]}"#;
        assert!(matches!(coeffs_from_json(text), Err(Error::Parse(_))));
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![ReportRow {
            case: "bep2".into(),
            c: 1.0 / 3.0,
            gamma_or_lambda: -1e-7,
            saturated: true,
            objective: 0.25,
            residual: 1e-17,
            bound: 2.0,
            empirical_error: 3.0e-5,
        }];
        let t = Table::from_csv(&report_table(&rows).to_csv().unwrap()).unwrap();
        assert_eq!(parse_report(&t).unwrap(), rows);
    }

    #[test]
    fn vector_grid_round_trip() {
        let grid = SphereGrid::new(4, 8).unwrap();
        let vals: Vec<[f64; 3]> = (0..grid.len()).map(|k| [k as f64 * 0.1, 1.0 / (k + 1) as f64, -0.3]).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        vector_grid_table(&grid, &vals).write(&path).unwrap();
        let (g2, v2) = read_vector_grid(&path).unwrap();
        assert_eq!(v2, vals);
        assert_eq!(g2.n_theta(), 4);
        assert_eq!(g2.n_phi(), 8);
    }
}
