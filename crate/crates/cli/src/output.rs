//! Tabular output in three formats. Machine formats print numbers with 17
//! significant digits and append provenance to every row.

use std::fmt::Write as _;

use clap::ValueEnum;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned columns for reading.
    Table,
    Csv,
    /// One JSON object per line.
    Record,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Num(f64),
    Missing,
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }
}

/// Where a result came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: &'static str,
}

impl Provenance {
    pub fn new(seed: u64, config: &[u8]) -> Self {
        let digest = Sha256::digest(config);
        let config_hash = digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self { seed, config_hash, version: env!("CARGO_PKG_VERSION") }
    }
}

/// `x` with 17 significant digits, positional when the exponent is moderate.
pub fn sig17(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.16e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..17).contains(&exp) {
        format!("{:.*}", (16 - exp) as usize, x)
    } else {
        sci
    }
}

/// `x` with `digits` significant digits for human tables.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return sig17(x);
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        format!("{:.*}", (digits as i32 - 1 - exp).max(0) as usize, x)
    } else {
        format!("{:.*e}", digits - 1, x)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format, prov: &Provenance) -> String {
        match format {
            Format::Table => self.human(prov),
            Format::Csv => self.csv(prov),
            Format::Record => self.records(prov),
        }
    }

    fn machine(cell: &Cell) -> String {
        match cell {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => sig17(*v),
            Cell::Missing => String::new(),
        }
    }

    fn csv(&self, prov: &Provenance) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header: Vec<&str> = self.columns.clone();
        header.extend(["seed", "config_hash", "version"]);
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut fields: Vec<String> = row.iter().map(Self::machine).collect();
            fields.extend([prov.seed.to_string(), prov.config_hash.clone(), prov.version.to_owned()]);
            w.write_record(&fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    fn records(&self, prov: &Provenance) -> String {
        let quote = |s: &str| serde_json::to_string(s).expect("string serialization");
        let mut out = String::new();
        for row in &self.rows {
            let mut fields: Vec<String> = self
                .columns
                .iter()
                .zip(row)
                .map(|(k, c)| {
                    let v = match c {
                        Cell::Text(s) => quote(s),
                        Cell::Int(v) => v.to_string(),
                        Cell::Num(v) if v.is_finite() => sig17(*v),
                        Cell::Num(_) | Cell::Missing => "null".into(),
                    };
                    format!("{}:{v}", quote(k))
                })
                .collect();
            fields.push(format!("\"seed\":{}", prov.seed));
            fields.push(format!("\"config_hash\":{}", quote(&prov.config_hash)));
            fields.push(format!("\"version\":{}", quote(prov.version)));
            let _ = writeln!(out, "{{{}}}", fields.join(","));
        }
        out
    }

    fn human(&self, prov: &Provenance) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Text(s) => s.clone(),
                        Cell::Int(v) => v.to_string(),
                        Cell::Num(v) => sig(*v, 4),
                        Cell::Missing => "-".into(),
                    })
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| cells.iter().map(|r| r[j].chars().count()).chain([self.columns[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |fields: Vec<&str>| {
            let parts: Vec<String> = fields.iter().zip(&widths).map(|(f, w)| format!("{f:>w$}")).collect();
            parts.join("  ").trim_end().to_owned()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(self.columns.clone()));
        for r in &cells {
            let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
        }
        let _ = writeln!(out, "# seed {} | config {} | mrstd {}", prov.seed, &prov.config_hash[..12], prov.version);
        out
    }
}
