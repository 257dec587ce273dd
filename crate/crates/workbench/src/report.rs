//! Tables and figures built from a finished run directory. Every SVG is
//! written next to a CSV of the same name holding the same numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chda_core::flow::ObservationSet;
use chda_core::io::load_ensemble;
use chda_core::EnsembleTag;

use crate::commands::{cell_dir, OBSERVATIONS, PREDICTIONS, RECORDS, TAPER_FINAL};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rundir::SNAPSHOT;
use crate::svg::{bar_chart, heatmaps, line_chart, num, Series};

pub const REPORT_DIR: &str = "report";

/// One parsed row of `records.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub iter: usize,
    pub rmse: f64,
    pub nv: f64,
    pub method: String,
    pub n_e: usize,
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let bad = |line: usize, what: &str| Error::Runtime(format!("records.csv line {line}: {what}"));
    let mut out = Vec::new();
    for (ln, line) in text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(ln + 1, "expected 6 columns"));
        }
        out.push(Record {
            iter: f[0].parse().map_err(|_| bad(ln + 1, "iter"))?,
            rmse: f[1].parse().map_err(|_| bad(ln + 1, "rmse"))?,
            nv: f[2].parse().map_err(|_| bad(ln + 1, "nv"))?,
            method: f[3].to_string(),
            n_e: f[4].parse().map_err(|_| bad(ln + 1, "Ne"))?,
        });
    }
    Ok(out)
}

/// Methods in order of first appearance and ensemble sizes ascending.
fn axes(records: &[Record]) -> (Vec<String>, Vec<usize>) {
    let mut methods: Vec<String> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut sizes: Vec<usize> = records.iter().map(|r| r.n_e).collect();
    sizes.sort_unstable();
    sizes.dedup();
    (methods, sizes)
}

/// Final-iteration record of every cell.
fn finals(records: &[Record]) -> BTreeMap<(String, usize), &Record> {
    let mut m: BTreeMap<(String, usize), &Record> = BTreeMap::new();
    for r in records {
        let e = m.entry((r.method.clone(), r.n_e)).or_insert(r);
        if r.iter > e.iter {
            *e = r;
        }
    }
    m
}

fn table(methods: &[String], sizes: &[usize], cell: impl Fn(&str, usize) -> Option<f64>) -> String {
    let mut s = String::from("method");
    for n in sizes {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for m in methods {
        s.push_str(m);
        for &n in sizes {
            s.push(',');
            if let Some(v) = cell(m, n) {
                s.push_str(&num(v));
            }
        }
        s.push('\n');
    }
    s
}

/// Mean predicted data of the prior and final posterior, keyed by iteration.
fn mean_predictions(text: &str) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let mut f = line.split(',');
        let iter: usize = f
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Runtime(format!("predictions line {}: bad iteration", ln + 1)))?;
        let vals: Vec<f64> = f
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Runtime(format!("predictions line {}: {e}", ln + 1)))?;
        let e = sums
            .entry(iter)
            .or_insert_with(|| (vec![0.0; vals.len()], 0));
        e.0.iter_mut().zip(&vals).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| (k, s.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes the report bundle into `run_dir/report` and returns the files written.
pub fn write_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let rec_path = run_dir.join(RECORDS);
    let records = match fs::read_to_string(&rec_path) {
        Ok(t) => parse_records(&t)?,
        Err(_) => vec![],
    };
    if records.is_empty() {
        return Err(Error::Runtime(format!(
            "no records in {}",
            run_dir.display()
        )));
    }
    let cfg = ExperimentConfig::from_toml(&read(&run_dir.join(SNAPSHOT))?)?;
    let (methods, sizes) = axes(&records);
    let fin = finals(&records);
    let dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: &str| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };

    let get = |m: &str, n: usize| fin.get(&(m.to_string(), n)).copied();
    put(
        "nv_table.csv",
        &table(&methods, &sizes, |m, n| get(m, n).map(|r| r.nv)),
    )?;
    put(
        "rmse_table.csv",
        &table(&methods, &sizes, |m, n| get(m, n).map(|r| r.rmse)),
    )?;

    let cats: Vec<String> = sizes.iter().map(|n| format!("Ne={n}")).collect();
    let bars: Vec<(String, Vec<Option<f64>>)> = methods
        .iter()
        .map(|m| {
            (
                m.clone(),
                sizes.iter().map(|&n| get(m, n).map(|r| r.nv)).collect(),
            )
        })
        .collect();
    let mut csv = String::from("method,Ne,nv\n");
    for (m, vals) in &bars {
        for (n, v) in sizes.iter().zip(vals) {
            if let Some(v) = v {
                let _ = writeln!(csv, "{m},Ne={n},{}", num(*v));
            }
        }
    }
    put("nv_bars.csv", &csv)?;
    put(
        "nv_bars.svg",
        &bar_chart("Normalized variance after assimilation", "NV", &cats, &bars),
    )?;

    for &n in &sizes {
        let mut csv = String::from("method,iter,rmse\n");
        let mut series = Vec::new();
        for m in &methods {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.n_e == n && &r.method == m)
                .map(|r| (r.iter as f64, r.rmse))
                .collect();
            for (x, y) in &pts {
                let _ = writeln!(csv, "{m},{},{}", num(*x), num(*y));
            }
            series.push(Series {
                name: m.clone(),
                points: pts,
                dashed: false,
            });
        }
        put(&format!("rmse_ne{n}.csv"), &csv)?;
        put(
            &format!("rmse_ne{n}.svg"),
            &line_chart(
                &format!("Data RMSE per iteration, Ne={n}"),
                "iteration",
                "RMSE (bar)",
                &series,
            ),
        )?;
    }

    let obs_path = run_dir.join(OBSERVATIONS);
    let dm_ne = cfg
        .experiment
        .data_match_ne
        .filter(|n| sizes.contains(n))
        .unwrap_or(*sizes.last().expect("records are non-empty"));
    if obs_path.exists() {
        let obs = ObservationSet::from_csv(&read(&obs_path)?)?;
        let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
        for m in &methods {
            let p = run_dir.join(cell_dir(m, dm_ne)).join(PREDICTIONS);
            if !p.exists() {
                continue;
            }
            let means = mean_predictions(&read(&p)?)?;
            if curves.is_empty() {
                if let Some(prior) = means.get(&0) {
                    curves.push(("prior".into(), prior.clone()));
                }
            }
            if let Some((_, post)) = means.iter().next_back().filter(|(k, _)| **k > 0) {
                curves.push((m.clone(), post.clone()));
            }
        }
        let nw = obs.n_wells;
        for w in 0..nw {
            let name = chda_core::flow::MONITOR_NAMES
                .get(w)
                .map_or_else(|| w.to_string(), |s| s.to_string());
            let mut csv = String::from("report_day,observed");
            for (c, _) in &curves {
                let _ = write!(csv, ",{c}");
            }
            csv.push('\n');
            for (r, t) in obs.times.iter().enumerate() {
                let _ = write!(csv, "{},{}", num(*t), num(obs.values[r * nw + w]));
                for (_, v) in &curves {
                    let _ = write!(csv, ",{}", num(v[r * nw + w]));
                }
                csv.push('\n');
            }
            let mut series = vec![Series {
                name: "observed".into(),
                points: obs
                    .times
                    .iter()
                    .enumerate()
                    .map(|(r, t)| (*t, obs.values[r * nw + w]))
                    .collect(),
                dashed: true,
            }];
            for (c, v) in &curves {
                series.push(Series {
                    name: format!("{c} mean"),
                    points: obs
                        .times
                        .iter()
                        .enumerate()
                        .map(|(r, t)| (*t, v[r * nw + w]))
                        .collect(),
                    dashed: false,
                });
            }
            let base = format!("data_match_ne{dm_ne}_well{name}");
            put(&format!("{base}.csv"), &csv)?;
            put(
                &format!("{base}.svg"),
                &line_chart(
                    &format!("Data match at well {name}, Ne={dm_ne}"),
                    "day",
                    "pressure (bar)",
                    &series,
                ),
            )?;
        }
    }

    // Final-iteration taper for the last report of the first monitor well.
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    for &n in &sizes {
        let mut panels = Vec::new();
        for m in &methods {
            let p = run_dir.join(cell_dir(m, n)).join(TAPER_FINAL);
            if !p.exists() {
                continue;
            }
            let stack = load_ensemble(&p, 0, EnsembleTag::Other("taper".into()))?;
            let datum = stack.len().saturating_sub(4);
            if let Some(f) = stack.members().get(datum) {
                panels.push((m.clone(), f.values().to_vec()));
            }
        }
        if panels.is_empty() {
            continue;
        }
        let mut csv = String::from("method,i,j,value\n");
        for (m, vals) in &panels {
            for (k, v) in vals.iter().enumerate() {
                let _ = writeln!(csv, "{m},{},{},{}", k % nx, k / nx, num(*v));
            }
        }
        put(&format!("localization_ne{n}.csv"), &csv)?;
        put(
            &format!("localization_ne{n}.svg"),
            &heatmaps(&format!("Localization maps, Ne={n}"), nx, ny, &panels),
        )?;
    }
    Ok(written)
}
