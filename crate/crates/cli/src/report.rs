//! Report files: CSV tables and the flat `key=value` summary.
//!
//! Column order is fixed:
//!
//! * `path.csv`: `t,body,x0..x{dim-1}`, one row per (node, body);
//! * `traj.csv`: the same plus `v0..v{dim-1}`.
//!
//! Numbers are written with 17 significant digits so that reloading
//! reproduces them exactly. Lines end in LF.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nbody_core::dynamics::Trajectory;
use nbody_core::{Configuration, DiscretePath};

use crate::CliError;

/// Full-precision decimal form of `x`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Ordered `key=value` lines.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn put_num(&mut self, key: impl Into<String>, value: f64) {
        self.put(key, num(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let v = v.replace('\n', " ");
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}

fn header(dim: usize, velocities: bool) -> String {
    let mut h = String::from("t,body");
    for k in 0..dim {
        let _ = write!(h, ",x{k}");
    }
    if velocities {
        for k in 0..dim {
            let _ = write!(h, ",v{k}");
        }
    }
    h.push('\n');
    h
}

fn rows(out: &mut String, t: f64, x: &Configuration, v: Option<&Configuration>) {
    for i in 0..x.n_bodies() {
        let _ = write!(out, "{},{i}", num(t));
        for c in x.point(i) {
            let _ = write!(out, ",{}", num(*c));
        }
        if let Some(v) = v {
            for c in v.point(i) {
                let _ = write!(out, ",{}", num(*c));
            }
        }
        out.push('\n');
    }
}

pub fn path_csv(path: &DiscretePath) -> String {
    let mut s = header(path.dim(), false);
    for (t, x) in path.times().iter().zip(path.nodes()) {
        rows(&mut s, *t, x, None);
    }
    s
}

pub fn traj_csv(traj: &Trajectory) -> String {
    let mut s = header(traj.dim(), true);
    for k in 0..traj.len() {
        rows(
            &mut s,
            traj.times()[k],
            &traj.positions()[k],
            Some(&traj.velocities()[k]),
        );
    }
    s
}

type Table = (Vec<f64>, Vec<Configuration>, Vec<Configuration>);

fn read_table(text: &str, velocities: bool, what: &str) -> Result<Table, String> {
    let mut lines = text.lines();
    let head = lines.next().ok_or(format!("{what}: empty file"))?;
    let cols: Vec<&str> = head.split(',').collect();
    let n_coord = cols.len().saturating_sub(2);
    let dim = if velocities { n_coord / 2 } else { n_coord };
    if cols.len() < 4 || head.trim_end() != header(dim, velocities).trim_end() {
        return Err(format!("{what}: unexpected header {head:?}"));
    }
    let mut times: Vec<f64> = Vec::new();
    let mut pos: Vec<Vec<f64>> = Vec::new();
    let mut vel: Vec<Vec<f64>> = Vec::new();
    let mut n_bodies = 0;
    for (ln, line) in lines.enumerate() {
        let lineno = ln + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(format!("{what} line {lineno}: expected {} fields", cols.len()));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| format!("{what} line {lineno}: bad number {s:?}"))
        };
        let t = parse(f[0])?;
        let body: usize = f[1]
            .parse()
            .map_err(|_| format!("{what} line {lineno}: bad body index {:?}", f[1]))?;
        if body == 0 {
            times.push(t);
            pos.push(Vec::new());
            vel.push(Vec::new());
        } else if times.last() != Some(&t) {
            return Err(format!("{what} line {lineno}: rows of one sample must share t"));
        }
        if body != pos.last().map_or(0, |p| p.len() / dim) {
            return Err(format!("{what} line {lineno}: bodies must be listed in order"));
        }
        for c in &f[2..2 + dim] {
            pos.last_mut().expect("started").push(parse(c)?);
        }
        if velocities {
            for c in &f[2 + dim..] {
                vel.last_mut().expect("started").push(parse(c)?);
            }
        }
        n_bodies = n_bodies.max(body + 1);
    }
    if times.is_empty() {
        return Err(format!("{what}: no rows"));
    }
    if pos.iter().any(|p| p.len() != n_bodies * dim) {
        return Err(format!("{what}: every sample must list all {n_bodies} bodies"));
    }
    let to_cfg = |v: Vec<Vec<f64>>| -> Result<Vec<Configuration>, String> {
        v.into_iter()
            .map(|c| Configuration::new(dim, c).map_err(|e| e.to_string()))
            .collect()
    };
    let vel = if velocities { to_cfg(vel)? } else { Vec::new() };
    Ok((times, to_cfg(pos)?, vel))
}

/// Parses a `path.csv` document.
pub fn parse_path_csv(text: &str) -> Result<DiscretePath, String> {
    let (t, x, _) = read_table(text, false, "path.csv")?;
    DiscretePath::new(t, x).map_err(|e| format!("path.csv: {e}"))
}

/// Parses a `traj.csv` document.
pub fn parse_traj_csv(text: &str) -> Result<Trajectory, String> {
    let (t, x, v) = read_table(text, true, "traj.csv")?;
    Trajectory::new(t, x, v).map_err(|e| format!("traj.csv: {e}"))
}

/// Reads and parses a path file; malformed content is a spec error.
pub fn load_path(file: &Path) -> Result<DiscretePath, CliError> {
    let text = fs::read_to_string(file)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", file.display())))?;
    parse_path_csv(&text).map_err(CliError::Spec)
}

/// Reads and parses a trajectory file; malformed content is a spec error.
pub fn load_trajectory(file: &Path) -> Result<Trajectory, CliError> {
    let text = fs::read_to_string(file)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", file.display())))?;
    parse_traj_csv(&text).map_err(CliError::Spec)
}

/// Files produced by one command, written together.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |e: std::io::Error, p: &Path| {
            CliError::Io(format!("cannot write {}: {e}", p.display()))
        };
        fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        for (name, content) in &self.files {
            let p = dir.join(name);
            fs::write(&p, content).map_err(|e| io(e, &p))?;
        }
        Ok(())
    }
}
