use std::fmt::Write as _;
use std::io::Write;

use delayfb::simcore::Trajectory;

/// Scientific notation with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_header(n: usize, kz: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=kz).map(|i| format!("z{i}")));
    cols.push("u".into());
    cols.push("y".into());
    cols.join(",")
}

pub fn write_csv(out: &mut dyn Write, traj: &Trajectory) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header(traj.n(), traj.kz()))?;
    let mut line = String::new();
    for k in 0..traj.len() {
        line.clear();
        line.push_str(&num(traj.times[k]));
        for v in traj.x[k].iter().chain(&traj.z[k]).chain([&traj.u[k], &traj.y[k]]) {
            line.push(',');
            line.push_str(&num(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Gnuplot script drawing every state column of `csv` against time.
pub fn gnuplot_script(csv: &str, n: usize, kz: usize, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set xlabel 't'");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set grid");
    let plots: Vec<String> = (2..=n + kz + 1).map(|c| format!("'{csv}' using 1:{c} with lines")).collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

/// Ordered `key = value` lines.
#[derive(Debug, Default)]
pub struct KeyValues {
    pub rows: Vec<(String, String)>,
}

impl KeyValues {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.rows.push((key.to_string(), value.to_string()));
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.push(key, num(value));
    }

    pub fn nums(&mut self, key: &str, values: &[f64]) {
        let parts: Vec<String> = values.iter().map(|v| num(*v)).collect();
        self.push(key, format!("[{}]", parts.join(", ")));
    }

    pub fn render_kv(&self) -> String {
        self.rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Header row of keys, one row of values; vectors keep their brackets and
    /// use `;` inside.
    pub fn render_csv(&self) -> String {
        let keys: Vec<&str> = self.rows.iter().map(|(k, _)| k.as_str()).collect();
        let vals: Vec<String> = self.rows.iter().map(|(_, v)| v.replace(", ", ";")).collect();
        format!("{}\n{}\n", keys.join(","), vals.join(","))
    }
}
