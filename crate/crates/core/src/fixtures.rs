//! Bundled protocol models and the verdict tables they are expected to
//! reproduce.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::buchi::SearchOptions;
use crate::gadgets::GadgetKind;
use crate::modelfmt::{parse_model, ModelDocument};
use crate::synthesis::{default_victim_configs, run_matrix, Matrix, MatrixSpec, Outcome};

pub const TCP_MODEL: &str = include_str!("../fixtures/tcp.fproto");
pub const ABP_MODEL: &str = include_str!("../fixtures/abp.fproto");
pub const TCP_EXPECTED: &str = include_str!("../fixtures/tcp_expected.json");
pub const ABP_EXPECTED: &str = include_str!("../fixtures/abp_expected.json");

pub fn tcp_model() -> ModelDocument {
    parse_model(TCP_MODEL).expect("bundled TCP model parses")
}

pub fn abp_model() -> ModelDocument {
    parse_model(ABP_MODEL).expect("bundled ABP model parses")
}

/// An expected verdict. Without `victims` it refers to the aggregated cell
/// (attack if any victim configuration is); with `victims` it refers to the
/// single run attacking exactly those channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCell {
    pub property: String,
    pub gadget: GadgetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victims: Option<Vec<String>>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableExpectation {
    pub table: String,
    pub properties: Vec<String>,
    pub gadgets: Vec<(GadgetKind, usize)>,
    pub cells: Vec<ExpectedCell>,
}

pub fn tcp_expectation() -> TableExpectation {
    serde_json::from_str(TCP_EXPECTED).expect("bundled TCP expectation parses")
}

pub fn abp_expectation() -> TableExpectation {
    serde_json::from_str(ABP_EXPECTED).expect("bundled ABP expectation parses")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub property: String,
    pub gadget: GadgetKind,
    pub victims: Option<Vec<String>>,
    pub expected: Outcome,
    pub actual: Option<Outcome>,
    pub detail: Option<String>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} under {}", self.property, self.gadget)?;
        if let Some(v) = &self.victims {
            write!(f, " on {}", v.join("+"))?;
        }
        write!(f, ": expected {}, got ", self.expected)?;
        match self.actual {
            Some(o) => write!(f, "{o}")?,
            None => f.write_str("error")?,
        }
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

impl TableExpectation {
    pub fn matrix_spec(&self, doc: &ModelDocument, options: SearchOptions, jobs: usize) -> MatrixSpec {
        MatrixSpec {
            properties: self.properties.clone(),
            gadgets: self.gadgets.clone(),
            victims: default_victim_configs(doc),
            options,
            jobs,
        }
    }

    pub fn compare(&self, m: &Matrix) -> Vec<Mismatch> {
        let mut out = Vec::new();
        for e in &self.cells {
            let Some(cell) = m.cell(&e.property, e.gadget) else {
                out.push(Mismatch {
                    property: e.property.clone(),
                    gadget: e.gadget,
                    victims: e.victims.clone(),
                    expected: e.outcome,
                    actual: None,
                    detail: Some("cell not evaluated".into()),
                });
                continue;
            };
            let (actual, detail) = match &e.victims {
                None => (cell.outcome, cell.runs.iter().find_map(|r| r.error.clone())),
                Some(v) => match cell.runs.iter().find(|r| &r.victims == v) {
                    Some(r) => (r.outcome, r.error.clone()),
                    None => (None, Some("victim configuration not evaluated".into())),
                },
            };
            if actual != Some(e.outcome) {
                out.push(Mismatch {
                    property: e.property.clone(),
                    gadget: e.gadget,
                    victims: e.victims.clone(),
                    expected: e.outcome,
                    actual,
                    detail,
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TableReport {
    pub table: String,
    pub matrix: Matrix,
    pub mismatches: Vec<Mismatch>,
}

impl TableReport {
    pub fn matches(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!("## {}\n\n{}\n", self.table, self.matrix.to_markdown());
        if self.matches() {
            out.push_str("matches the expected table\n");
        } else {
            for m in &self.mismatches {
                out.push_str(&format!("MISMATCH {m}\n"));
            }
        }
        out
    }
}

/// Runs the matrix an expectation describes against `doc` and compares.
pub fn check_table(doc: &ModelDocument, expected: &TableExpectation, options: SearchOptions, jobs: usize) -> TableReport {
    let matrix = run_matrix(doc, &expected.matrix_spec(doc, options, jobs));
    let mismatches = expected.compare(&matrix);
    TableReport { table: expected.table.clone(), matrix, mismatches }
}

/// Re-runs the TCP and ABP tables from the bundled models.
pub fn reproduce_tables(options: SearchOptions, jobs: usize) -> Vec<TableReport> {
    vec![
        check_table(&tcp_model(), &tcp_expectation(), options, jobs),
        check_table(&abp_model(), &abp_expectation(), options, jobs),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixtures_load() {
        let tcp = tcp_model();
        assert_eq!(tcp.processes.len(), 2);
        assert_eq!(tcp.properties.len(), 6);
        let abp = abp_model();
        assert!(abp.property("phi_abp").is_some());
        assert_eq!(tcp_expectation().cells.len(), 18);
        assert_eq!(abp_expectation().cells.len(), 9);
    }
}
