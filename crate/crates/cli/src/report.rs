//! Tab-separated run reports.
//!
//! A report has five sections, each introduced by a `# name` line and a
//! header row: `scenario` (key/value), `iterations` (span and mean
//! alignment per iteration), `alignment` (per attribute), `label_modifications`
//! and `counts` (the raw measured histograms the summaries derive from).
//! Floats are written in shortest round-trip form, so a parsed report
//! reproduces the exact values it was written from.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use divprompt_core::metrics::{self, alignment};
use divprompt_core::sampler::largest_remainder;
use divprompt_core::session::IterationSnapshot;
use divprompt_core::{Distribution, Session};

use crate::scenario::Scenario;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub parent: Option<usize>,
    pub seed: u64,
    pub span: f64,
    pub mean_alignment: Option<f64>,
    pub mean_alignment_quota: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub iteration: usize,
    pub attribute: String,
    pub alignment_target: f64,
    pub alignment_quota: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountRow {
    pub iteration: usize,
    pub attribute: String,
    pub label: String,
    pub target: f64,
    pub quota_target: f64,
    pub measured: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub scenario: Vec<(String, String)>,
    pub iterations: Vec<IterationRow>,
    pub alignment: Vec<AlignmentRow>,
    pub label_modifications: Vec<(String, usize)>,
    pub counts: Vec<CountRow>,
}

/// Target rounded the way quota sampling rounds it for `n` images.
pub fn quota_target(target: &Distribution, n: usize) -> Distribution {
    let counts = largest_remainder(target.weights(), n);
    Distribution::from_counts(&counts).unwrap_or_else(|| target.clone())
}

fn clean(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn snapshot_rows(s: &IterationSnapshot, n: usize, report: &mut Report) -> Result<(), CliError> {
    let span = metrics::span(&s.embeddings()).map_err(|e| CliError::Invariant(e.to_string()))?;
    let mut to_target = Vec::new();
    let mut to_quota = Vec::new();
    for spec in &s.attributes {
        let Some(m) = s.measured.get(spec.name()) else { continue };
        let quota = quota_target(spec.target(), n);
        for (i, label) in spec.labels().iter().enumerate() {
            report.counts.push(CountRow {
                iteration: s.index,
                attribute: clean(spec.name()),
                label: clean(label.as_str()),
                target: spec.target().weights()[i],
                quota_target: quota.weights()[i],
                measured: m.counts[i],
            });
        }
        let measured = Distribution::from_counts(&m.counts).ok_or_else(|| CliError::Invariant("empty histogram".into()))?;
        let a = alignment(&measured, spec.target()).map_err(|e| CliError::Invariant(e.to_string()))?;
        let aq = alignment(&measured, &quota).map_err(|e| CliError::Invariant(e.to_string()))?;
        to_target.push(a);
        to_quota.push(aq);
        report.alignment.push(AlignmentRow { iteration: s.index, attribute: clean(spec.name()), alignment_target: a, alignment_quota: aq });
    }
    report.iterations.push(IterationRow {
        iteration: s.index,
        parent: s.parent,
        seed: s.seed,
        span,
        mean_alignment: mean(&to_target),
        mean_alignment_quota: mean(&to_quota),
    });
    Ok(())
}

impl Report {
    pub fn build(scenario: &Scenario, session: &Session) -> Result<Self, CliError> {
        let mut report = Report {
            scenario: vec![
                ("name".into(), clean(&scenario.name)),
                ("context".into(), clean(session.context())),
                ("n".into(), session.image_count().to_string()),
                ("seed".into(), session.seed().to_string()),
                ("mode".into(), format!("{:?}", session.mode()).to_lowercase()),
                ("mock_q".into(), scenario.mock.q.to_string()),
                ("mock_sigma".into(), scenario.mock.sigma.to_string()),
                ("iterations".into(), session.iterations().len().to_string()),
            ],
            ..Report::default()
        };
        for snapshot in session.iterations() {
            snapshot_rows(snapshot, session.image_count(), &mut report)?;
        }
        report.label_modifications = session.label_modifications().into_iter().map(|(k, v)| (clean(&k), v)).collect();
        Ok(report)
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.scenario.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn last_iteration(&self) -> Option<&IterationRow> {
        self.iterations.last()
    }

    /// Count rows of one iteration grouped by attribute, in report order.
    pub fn histograms(&self, iteration: usize) -> Vec<(&str, Vec<&CountRow>)> {
        let mut out: Vec<(&str, Vec<&CountRow>)> = Vec::new();
        for row in self.counts.iter().filter(|r| r.iteration == iteration) {
            match out.iter_mut().find(|(a, _)| *a == row.attribute) {
                Some((_, rows)) => rows.push(row),
                None => out.push((&row.attribute, vec![row])),
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        let mut out = String::from("# scenario\nkey\tvalue\n");
        for (k, v) in &self.scenario {
            let _ = writeln!(out, "{k}\t{v}");
        }
        out.push_str("\n# iterations\niteration\tparent\tseed\tspan\tmean_alignment\tmean_alignment_quota\n");
        for r in &self.iterations {
            let parent = r.parent.map_or("-".to_string(), |p| p.to_string());
            let _ = writeln!(out, "{}\t{parent}\t{}\t{}\t{}\t{}", r.iteration, r.seed, r.span, opt(r.mean_alignment), opt(r.mean_alignment_quota));
        }
        out.push_str("\n# alignment\niteration\tattribute\talignment_target\talignment_quota\n");
        for r in &self.alignment {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.iteration, r.attribute, r.alignment_target, r.alignment_quota);
        }
        out.push_str("\n# label_modifications\nattribute\tcount\n");
        for (a, c) in &self.label_modifications {
            let _ = writeln!(out, "{a}\t{c}");
        }
        out.push_str("\n# counts\niteration\tattribute\tlabel\ttarget\tquota_target\tmeasured\n");
        for r in &self.counts {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", r.iteration, r.attribute, r.label, r.target, r.quota_target, r.measured);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<&str, Vec<Vec<&str>>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        let mut expect_header = false;
        for line in text.lines() {
            if let Some(name) = line.strip_prefix("# ") {
                current = Some(name.trim());
                sections.insert(name.trim(), Vec::new());
                expect_header = true;
            } else if line.is_empty() {
                continue;
            } else if expect_header {
                expect_header = false;
            } else {
                let section = current.ok_or_else(|| bad("data before the first section"))?;
                sections.get_mut(section).expect("section inserted").push(line.split('\t').collect());
            }
        }
        let rows = |name: &str, width: usize| -> Result<Vec<Vec<&str>>, CliError> {
            let rows = sections.get(name).cloned().ok_or_else(|| bad(&format!("missing section {name}")))?;
            if let Some(r) = rows.iter().find(|r| r.len() != width) {
                return Err(bad(&format!("section {name}: expected {width} columns, got {}", r.len())));
            }
            Ok(rows)
        };

        let mut report = Report::default();
        for r in rows("scenario", 2)? {
            report.scenario.push((r[0].to_string(), r[1].to_string()));
        }
        for r in rows("iterations", 6)? {
            report.iterations.push(IterationRow {
                iteration: num(r[0])?,
                parent: optional(r[1], num)?,
                seed: num(r[2])?,
                span: num(r[3])?,
                mean_alignment: optional(r[4], num)?,
                mean_alignment_quota: optional(r[5], num)?,
            });
        }
        for r in rows("alignment", 4)? {
            report.alignment.push(AlignmentRow {
                iteration: num(r[0])?,
                attribute: r[1].to_string(),
                alignment_target: num(r[2])?,
                alignment_quota: num(r[3])?,
            });
        }
        for r in rows("label_modifications", 2)? {
            report.label_modifications.push((r[0].to_string(), num(r[1])?));
        }
        for r in rows("counts", 6)? {
            report.counts.push(CountRow {
                iteration: num(r[0])?,
                attribute: r[1].to_string(),
                label: r[2].to_string(),
                target: num(r[3])?,
                quota_target: num(r[4])?,
                measured: num(r[5])?,
            });
        }
        Ok(report)
    }

    /// Recomputes every alignment from the raw counts and checks it against
    /// the summary rows.
    pub fn check_consistency(&self) -> Result<(), CliError> {
        for row in &self.alignment {
            let hist = self
                .histograms(row.iteration)
                .into_iter()
                .find(|(a, _)| *a == row.attribute)
                .map(|(_, rows)| rows)
                .ok_or_else(|| CliError::Invariant(format!("no counts for {} in iteration {}", row.attribute, row.iteration)))?;
            let counts: Vec<usize> = hist.iter().map(|r| r.measured).collect();
            let target: Vec<f64> = hist.iter().map(|r| r.target).collect();
            let quota: Vec<f64> = hist.iter().map(|r| r.quota_target).collect();
            let recompute = |weights: &[f64]| -> Result<f64, CliError> {
                let measured = Distribution::from_counts(&counts).ok_or_else(|| CliError::Invariant("empty histogram".into()))?;
                let t = Distribution::new(weights.to_vec()).map_err(|e| CliError::Invariant(e.to_string()))?;
                alignment(&measured, &t).map_err(|e| CliError::Invariant(e.to_string()))
            };
            for (label, expected, got) in [
                ("target", row.alignment_target, recompute(&target)?),
                ("quota", row.alignment_quota, recompute(&quota)?),
            ] {
                if (expected - got).abs() > 1e-12 {
                    return Err(CliError::Invariant(format!(
                        "iteration {} {}: reported {label} alignment {expected} but counts give {got}",
                        row.iteration, row.attribute
                    )));
                }
            }
        }
        Ok(())
    }
}

fn bad(msg: &str) -> CliError {
    CliError::Parse(format!("report: {msg}"))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|_| bad(&format!("bad number {s:?}")))
}

fn optional<T>(s: &str, f: impl Fn(&str) -> Result<T, CliError>) -> Result<Option<T>, CliError> {
    if s == "-" {
        Ok(None)
    } else {
        f(s).map(Some)
    }
}
