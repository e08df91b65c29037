use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use dualdrive::table::{fmt_f64, Csv};

use super::{overlay, read_text, require, Command};
use crate::error::{CliError, CliResult};
use crate::run::{verify_manifest, Manifest, RunDir, Summary, MANIFEST, SUMMARY};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportParams {
    /// Directory holding completed runs, searched recursively.
    pub runs: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ReportArgs {
    #[arg(long)]
    runs: Option<PathBuf>,
}

struct FoundRun {
    dir: PathBuf,
    rel: String,
    summary: Summary,
}

fn find_manifests(root: &Path, skip: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        if skip.is_some_and(|s| std::fs::canonicalize(&d).ok().as_deref() == Some(s)) {
            continue;
        }
        let entries = std::fs::read_dir(&d).map_err(|e| CliError::Data(format!("{}: {e}", d.display())))?;
        for entry in entries {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == MANIFEST) {
                found.push(d.clone());
            }
        }
    }
    found.sort();
    found.dedup();
    Ok(found)
}

fn runs_of<'a>(found: &'a [FoundRun], cmd: &'static str) -> impl Iterator<Item = &'a FoundRun> {
    found.iter().filter(move |r| r.summary.command == cmd)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Appends the data rows of `text` to `out`, taking the header from the first file.
fn concat_csv(out: &mut Option<String>, text: &str, what: &str) -> CliResult<()> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    match out {
        None => {
            *out = Some(format!("{header}\n"));
        }
        Some(existing) => {
            if existing.lines().next() != Some(header) {
                return Err(CliError::Data(format!("{what}: header differs between runs")));
            }
        }
    }
    let acc = out.as_mut().expect("initialised above");
    for l in lines.filter(|l| !l.is_empty()) {
        acc.push_str(l);
        acc.push('\n');
    }
    Ok(())
}

fn markdown(title: &str, csv: &str) -> String {
    let mut out = format!("## {title}\n\n");
    let mut lines = csv.lines();
    let Some(header) = lines.next() else {
        return out + "(no data)\n\n";
    };
    let cols = header.split(',').count();
    out.push_str(&format!("| {} |\n", header.replace(',', " | ")));
    out.push_str(&format!("|{}\n", " --- |".repeat(cols)));
    let mut rows = 0;
    for l in lines {
        out.push_str(&format!("| {} |\n", l.replace(',', " | ")));
        rows += 1;
    }
    if rows == 0 {
        out.push_str("\n(no data)\n");
    }
    out.push('\n');
    out
}

impl Command for ReportArgs {
    const NAME: &'static str = "report";
    type Params = ReportParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; runs);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let root = require(&p.runs, "runs")?;
        let skip = std::fs::canonicalize(run.dir()).ok();
        let dirs = find_manifests(root, skip.as_deref())?;

        // Every manifest is checked before anything is written.
        let mut drift = Vec::new();
        let mut runs = Vec::new();
        for dir in dirs {
            let mpath = dir.join(MANIFEST);
            let text = std::fs::read_to_string(&mpath).map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
            drift.extend(verify_manifest(&dir, &m));
            let rel = dir.strip_prefix(root).unwrap_or(&dir).display().to_string();
            runs.push((dir, rel, m));
        }
        if !drift.is_empty() {
            return Err(CliError::Data(format!("manifest drift detected:\n  {}", drift.join("\n  "))));
        }
        let mut found = Vec::new();
        for (dir, rel, m) in runs {
            run.input(&dir.join(MANIFEST))?;
            let spath = dir.join(SUMMARY);
            if !spath.is_file() {
                continue;
            }
            let summary: Summary = serde_json::from_str(&read_text(run, &spath)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", spath.display())))?;
            if summary.command != m.command {
                return Err(CliError::Data(format!("{}: summary and manifest disagree on the command", dir.display())));
            }
            found.push(FoundRun {
                dir,
                rel: if rel.is_empty() { ".".into() } else { rel },
                summary,
            });
        }
        let of = |cmd: &'static str| runs_of(&found, cmd);

        // Interchangeability summary, one row per feature level.
        let mut t1: BTreeMap<String, [Option<f64>; 9]> = BTreeMap::new();
        for r in of("sae-train") {
            let f = r.summary.labels.get("feature").cloned().unwrap_or_default();
            let v = &r.summary.values;
            let row = t1.entry(f).or_default();
            let gap = |s: &str, c: &str| Some(v.get(s)? - v.get(c)?);
            let cells = [
                v.get("cka_orig").copied(),
                v.get("cka_shared").copied(),
                v.get("r2_cross_x").copied(),
                v.get("r2_cross_y").copied(),
                gap("r2_shared_x", "r2_cross_x"),
                gap("r2_shared_y", "r2_cross_y"),
            ];
            for (slot, c) in row.iter_mut().zip(cells) {
                if slot.is_none() {
                    *slot = c;
                }
            }
        }
        for r in of("cca") {
            let f = r.summary.labels.get("feature").cloned().unwrap_or_default();
            let v = &r.summary.values;
            let row = t1.entry(f).or_default();
            for (i, key) in [(6, "mean_at_k"), (7, "aer_x"), (8, "aer_y")] {
                if row[i].is_none() {
                    row[i] = v.get(key).copied();
                }
            }
        }
        let mut csv = Csv::new(&[
            "feature",
            "cka_orig",
            "cka_shared",
            "r2_cross_x",
            "r2_cross_y",
            "gap_x",
            "gap_y",
            "cca_mean_at_k",
            "aer_x",
            "aer_y",
        ]);
        for (f, cells) in &t1 {
            let mut row = vec![f.clone()];
            row.extend(cells.iter().map(|c| opt(*c)));
            csv.row(row);
        }
        let table1 = csv.into_string();

        // Gating: branch baselines, oracle and every gate.
        let mut csv = Csv::new(&["method", "score"]);
        if let Some(b) = of("score").chain(of("gate-rules")).chain(of("gate-train")).find(|r| r.summary.values.contains_key("vlm_mean")) {
            for (name, key) in [("vlm", "vlm_mean"), ("vit", "vit_mean"), ("oracle_best_of_two", "oracle_mean")] {
                csv.row([name.to_string(), opt(b.summary.values.get(key).copied())]);
            }
        }
        for cmd in ["gate-rules", "gate-train", "gate-eval"] {
            for r in of(cmd) {
                for (k, v) in &r.summary.values {
                    if let Some(name) = k.strip_prefix("realized_") {
                        csv.row([format!("{}:{name}", r.rel), fmt_f64(*v)]);
                    }
                }
            }
        }
        let table2 = csv.into_string();

        // Loss-weight sweep and gate threshold sweep, concatenated across runs.
        let mut table3 = None;
        for r in of("sae-sweep") {
            concat_csv(&mut table3, &read_text(run, &r.dir.join("sweep.csv"))?, "sweep.csv")?;
        }
        let mut table5 = None;
        for r in of("gate-rules") {
            let p = r.dir.join("tau_sweep.csv");
            if p.is_file() {
                concat_csv(&mut table5, &read_text(run, &p)?, "tau_sweep.csv")?;
            }
        }
        let table3 = table3.unwrap_or_default();
        let table5 = table5.unwrap_or_default();

        // Trajectory selection and routing.
        let mut csv = Csv::new(&["run", "method", "score"]);
        for (cmd, keys) in [
            ("bon", &["vlm_mean", "vit_mean", "best_of_2_mean", "best_of_n_mean", "midpoint_mean"][..]),
            ("select", &["selected_mean", "endpoints_mean"][..]),
            ("dual-sweep", &["fast_only_mean", "slow_path_only_mean", "target_mean_score", "target_speedup"][..]),
        ] {
            for r in of(cmd) {
                for k in keys {
                    if let Some(v) = r.summary.values.get(*k) {
                        csv.row([r.rel.clone(), format!("{cmd}:{k}"), fmt_f64(*v)]);
                    }
                }
            }
        }
        let selection = csv.into_string();

        let mut md = String::from("# Run report\n\n");
        md.push_str(&format!("{} runs verified under `{}`.\n\n", found.len(), root.display()));
        for r in &found {
            md.push_str(&format!("- `{}`: {}\n", r.rel, r.summary.command));
        }
        md.push('\n');
        md.push_str(&markdown("Interchangeability", &table1));
        md.push_str(&markdown("Gating", &table2));
        md.push_str(&markdown("Loss-weight sweep", &table3));
        md.push_str(&markdown("Gate threshold sweep", &table5));
        md.push_str(&markdown("Selection and routing", &selection));

        run.write("table1_interchangeability.csv", &table1)?;
        run.write("table2_gating.csv", &table2)?;
        run.write("table3_sae_sweep.csv", &table3)?;
        run.write("table5_gate_sweep.csv", &table5)?;
        run.write("selection.csv", &selection)?;
        run.write("report.md", md)?;
        run.value("runs", found.len() as f64);
        Ok(())
    }
}
