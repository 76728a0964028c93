use std::fmt::Write as _;

use divprompt_core::metrics::alignment;
use divprompt_core::Distribution;

use crate::report::Report;
use crate::CliError;

/// What makes two runs comparable: the context and the attribute/label sets.
fn identity(report: &Report) -> Result<(String, Vec<(String, Vec<String>)>), CliError> {
    let last = report.last_iteration().ok_or_else(|| CliError::Parse("report has no iterations".into()))?;
    let context = report.field("context").ok_or_else(|| CliError::Parse("report has no context".into()))?;
    let attrs = report
        .histograms(last.iteration)
        .into_iter()
        .map(|(a, rows)| (a.to_string(), rows.iter().map(|r| r.label.clone()).collect()))
        .collect();
    Ok((context.to_string(), attrs))
}

/// Side-by-side table of the final iteration of each run: span, then for
/// every attribute the alignment to its target and to the uniform
/// distribution over its labels.
pub fn compare(runs: &[(String, Report)]) -> Result<String, CliError> {
    let (first_name, first) = runs.first().ok_or_else(|| CliError::Parse("nothing to compare".into()))?;
    let reference = identity(first)?;
    for (name, report) in &runs[1..] {
        let other = identity(report)?;
        if other.0 != reference.0 {
            return Err(CliError::MismatchedScenarios(format!("{name} has context {:?}, {first_name} has {:?}", other.0, reference.0)));
        }
        if other.1 != reference.1 {
            return Err(CliError::MismatchedScenarios(format!("{name} and {first_name} use different attributes or labels")));
        }
    }

    let mut out = String::from("metric");
    for (name, _) in runs {
        let _ = write!(out, "\t{name}");
    }
    out.push('\n');

    let mut columns: Vec<Vec<(String, f64)>> = Vec::new();
    for (_, report) in runs {
        let last = report.last_iteration().expect("checked above");
        let mut col = vec![("span".to_string(), last.span)];
        for (attr, rows) in report.histograms(last.iteration) {
            let counts: Vec<usize> = rows.iter().map(|r| r.measured).collect();
            let measured = Distribution::from_counts(&counts).ok_or_else(|| CliError::Invariant(format!("{attr}: empty histogram")))?;
            let target = Distribution::new(rows.iter().map(|r| r.target).collect()).map_err(|e| CliError::Invariant(e.to_string()))?;
            let uniform = Distribution::uniform(rows.len()).map_err(|e| CliError::Invariant(e.to_string()))?;
            let a = |t: &Distribution| alignment(&measured, t).map_err(|e| CliError::Invariant(e.to_string()));
            col.push((format!("alignment_target:{attr}"), a(&target)?));
            col.push((format!("alignment_uniform:{attr}"), a(&uniform)?));
        }
        columns.push(col);
    }
    for (i, (metric, _)) in columns[0].iter().enumerate() {
        out.push_str(metric);
        for col in &columns {
            let _ = write!(out, "\t{}", col[i].1);
        }
        out.push('\n');
    }
    Ok(out)
}
