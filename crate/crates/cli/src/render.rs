//! Aligned plain-text tables.

use std::fmt::Write;

use crate::report::{AffinityTable, RankTable, Report, SaliencyTable, ShareTable};

/// Left-aligns the first column and right-aligns the rest.
pub fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = width[0]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = width[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), num)
}

pub fn render_affinity(t: &AffinityTable) -> String {
    let mut rows = vec![std::iter::once(String::new()).chain(t.cols.iter().cloned()).collect::<Vec<_>>()];
    for (i, name) in t.rows.iter().enumerate() {
        let mut est = vec![name.clone()];
        for (j, v) in t.estimate[i].iter().enumerate() {
            let star = t.significant.as_ref().is_some_and(|s| s[i][j]);
            est.push(format!("{}{}", num(*v), if star { "*" } else { " " }));
        }
        rows.push(est);
        if let Some(se) = &t.std_error {
            rows.push(std::iter::once(String::new()).chain(se[i].iter().map(|v| format!("({}) ", num(*v)))).collect());
        }
        if let Some(bs) = &t.bootstrap_std {
            rows.push(std::iter::once(String::new()).chain(bs[i].iter().map(|v| format!("[{}] ", num(*v)))).collect());
        }
    }
    let mut out = format!("Affinity matrix {} (standardized attributes)\n", t.parameter);
    out.push_str(&table(&rows));
    if t.std_error.is_some() {
        let _ = writeln!(out, "(asymptotic standard errors); * |estimate|/se > {}", t.critical_value);
    }
    if t.bootstrap_std.is_some() {
        out.push_str("[bootstrap standard deviations]\n");
    }
    out
}

pub fn render_saliency(t: &SaliencyTable) -> String {
    let d = t.singular_values.len();
    let mut rows = vec![std::iter::once(String::new()).chain((1..=d).map(|k| format!("index {k}"))).collect::<Vec<_>>()];
    rows.push(vec!["Men".into()]);
    for (name, l) in t.names_x.iter().zip(&t.loadings_x) {
        rows.push(std::iter::once(format!("  {name}")).chain(l.iter().map(|v| num(*v))).collect());
    }
    rows.push(vec!["Women".into()]);
    for (name, l) in t.names_y.iter().zip(&t.loadings_y) {
        rows.push(std::iter::once(format!("  {name}")).chain(l.iter().map(|v| num(*v))).collect());
    }
    rows.push(std::iter::once("Singular value".to_string()).chain(t.singular_values.iter().map(|v| num(*v))).collect());
    rows.push(std::iter::once("Cumulative share".to_string()).chain(t.cumulative_shares.iter().map(|v| num(*v))).collect());
    let mut out = String::from("Saliency loadings\n");
    out.push_str(&table(&rows));
    if t.subspace_non_unique {
        out.push_str("note: repeated singular values, indices within a block are not unique\n");
    }
    out
}

pub fn render_shares(t: &ShareTable) -> String {
    let mut head = vec!["index".to_string(), "share".into()];
    if t.std.is_some() {
        head.push("std".into());
    }
    let mut rows = vec![head];
    for (k, s) in t.shares.iter().enumerate() {
        let mut r = vec![(k + 1).to_string(), num(*s)];
        if let Some(std) = &t.std {
            r.push(num(std[k]));
        }
        rows.push(r);
    }
    let mut out = String::from("Shares of the joint surplus\n");
    out.push_str(&table(&rows));
    match &t.std {
        Some(_) => {
            let _ = writeln!(
                out,
                "std over {} bootstrap replicates ({} failed)",
                t.bootstrap_reps, t.bootstrap_failures
            );
        }
        None => out.push_str("std omitted: no bootstrap replicates\n"),
    }
    out
}

pub fn render_rank(t: &RankTable) -> String {
    let mut rows = vec![vec![
        "p".to_string(),
        "statistic".into(),
        "df".into(),
        "p-value".into(),
        "reject".into(),
    ]];
    for r in &t.rows {
        let reject = match (r.reject, &r.error) {
            (_, Some(_)) => "error".to_string(),
            (Some(true), _) => "yes".into(),
            (Some(false), _) => "no".into(),
            (None, _) => "-".into(),
        };
        rows.push(vec![
            r.p.to_string(),
            opt(r.statistic),
            r.df.to_string(),
            opt(r.p_value),
            format!("{reject}{}", if r.degenerate { " (degenerate)" } else { "" }),
        ]);
    }
    let mut out = format!("Rank tests, H0: rank = p (level {})\n", t.alpha);
    out.push_str(&table(&rows));
    for r in &t.rows {
        if let Some(e) = &r.error {
            let _ = writeln!(out, "p = {}: {e}", r.p);
        }
    }
    match t.sorting_dimension {
        Some(d) => {
            let _ = writeln!(out, "sorting dimension: {d}");
        }
        None => out.push_str("sorting dimension: undetermined\n"),
    }
    out
}

pub fn render_report(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "couples: {} used, {} dropped of {} read",
        r.ingestion.rows_used, r.ingestion.rows_dropped, r.ingestion.rows_read
    );
    let _ = writeln!(
        out,
        "fit: {} Newton iterations, moment gap {:.3e}, sigma {}",
        r.fit.iterations,
        r.fit.moment_gap,
        opt(r.fit.sigma)
    );
    out.push('\n');
    out.push_str(&render_affinity(&r.affinity));
    if let Some(s) = &r.saliency {
        out.push('\n');
        out.push_str(&render_saliency(s));
    }
    if let Some(s) = &r.shares {
        out.push('\n');
        out.push_str(&render_shares(s));
    }
    if let Some(t) = &r.rank_tests {
        out.push('\n');
        out.push_str(&render_rank(t));
    }
    if !r.notes.is_empty() {
        out.push_str("\nNotes\n");
        for n in &r.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    if !r.failures.is_empty() {
        out.push_str("\nFailures\n");
        for f in &r.failures {
            let _ = writeln!(out, "- {}: {}", f.stage, f.message);
        }
    }
    let _ = writeln!(
        out,
        "\nseed {}, config {}, schema {}",
        r.provenance.seed, r.provenance.config_hash, r.schema_version
    );
    out
}
