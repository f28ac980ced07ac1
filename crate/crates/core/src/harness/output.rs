use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{HarnessError, Result};
use crate::policy::{Mode, Trajectory};

pub const MAX_CURVE_POINTS: usize = 500;

pub const CSV_HEADER: [&str; 13] = [
    "rep",
    "t",
    "x",
    "v",
    "lambda",
    "bin_m",
    "bid",
    "won",
    "payment",
    "reward",
    "d_observed",
    "budget_remaining",
    "alpha_hat",
];

/// One persisted trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub rep: usize,
    pub t: usize,
    pub x: Vec<f64>,
    pub v: f64,
    pub lambda: f64,
    pub bin_m: Option<usize>,
    pub bid: Option<f64>,
    pub won: bool,
    pub payment: f64,
    pub reward: f64,
    pub d_observed: Option<f64>,
    pub budget_remaining: f64,
    pub alpha_hat: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(rep: usize, trajectory: &Trajectory) -> Vec<TrajectoryRecord> {
        trajectory
            .rows
            .iter()
            .map(|r| TrajectoryRecord {
                rep,
                t: r.t,
                x: r.x.clone(),
                v: r.v,
                lambda: r.lambda,
                bin_m: r.bin,
                bid: r.bid,
                won: r.won,
                payment: r.payment,
                reward: r.reward,
                d_observed: r.d_observed,
                budget_remaining: r.budget_remaining,
                alpha_hat: r.alpha_hat.clone(),
            })
            .collect()
    }

    fn fields(&self) -> [String; 13] {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.rep.to_string(),
            self.t.to_string(),
            join(&self.x),
            self.v.to_string(),
            self.lambda.to_string(),
            self.bin_m.map(|b| b.to_string()).unwrap_or_default(),
            opt(self.bid),
            if self.won { "1" } else { "0" }.to_string(),
            self.payment.to_string(),
            self.reward.to_string(),
            opt(self.d_observed),
            self.budget_remaining.to_string(),
            join(&self.alpha_hat),
        ]
    }
}

pub fn trajectory_file_name(mode: Mode, rep: usize) -> String {
    format!("trajectory_{}_rep{:03}.csv", mode.name(), rep)
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRecord]) -> Result<()> {
    let io = |e: csv::Error| HarnessError::io(path, e.into());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for row in rows {
        w.write_record(row.fields()).map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path).map_err(|e| HarnessError::io(path, e.into()))?;
    let data = |row: usize, message: String| HarnessError::Data { path: PathBuf::from(path), row, message };
    let header = reader.headers().map_err(|e| data(1, e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(data(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| data(row, e.to_string()))?;
        let field = |k: usize| record.get(k).ok_or_else(|| data(row, format!("missing column `{}`", CSV_HEADER[k])));
        let num = |k: usize| -> Result<f64> {
            let s = field(k)?;
            s.parse().map_err(|_| data(row, format!("column `{}`: bad number `{s}`", CSV_HEADER[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>> { if field(k)?.is_empty() { Ok(None) } else { num(k).map(Some) } };
        let int = |k: usize| -> Result<usize> {
            let s = field(k)?;
            s.parse().map_err(|_| data(row, format!("column `{}`: bad integer `{s}`", CSV_HEADER[k])))
        };
        let vec = |k: usize| -> Result<Vec<f64>> {
            field(k)?
                .split(';')
                .map(|s| s.parse().map_err(|_| data(row, format!("column `{}`: bad number `{s}`", CSV_HEADER[k]))))
                .collect()
        };
        rows.push(TrajectoryRecord {
            rep: int(0)?,
            t: int(1)?,
            x: vec(2)?,
            v: num(3)?,
            lambda: num(4)?,
            bin_m: if field(5)?.is_empty() { None } else { Some(int(5)?) },
            bid: opt(6)?,
            won: match field(7)? {
                "1" => true,
                "0" => false,
                other => return Err(data(row, format!("column `won`: expected 0 or 1, got `{other}`"))),
            },
            payment: num(8)?,
            reward: num(9)?,
            d_observed: opt(10)?,
            budget_remaining: num(11)?,
            alpha_hat: vec(12)?,
        });
    }
    Ok(rows)
}

/// Keeps at most `MAX_CURVE_POINTS` evenly spaced points, always including
/// both ends. Points are `(t, value)` with 1-based `t`.
pub fn downsample(curve: &[f64]) -> Vec<(usize, f64)> {
    let n = curve.len();
    if n <= MAX_CURVE_POINTS {
        return curve.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
    }
    let last = MAX_CURVE_POINTS - 1;
    (0..MAX_CURVE_POINTS)
        .map(|k| {
            let i = (k * (n - 1) + last / 2) / last;
            (i + 1, curve[i])
        })
        .collect()
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Average-reward-per-round plot, one line per series.
pub fn render_svg(title: &str, series: &[(String, Vec<(usize, f64)>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let t_max = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).max().unwrap_or(1).max(2) as f64;
    let mut y_max = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).fold(0.0f64, f64::max);
    if !(y_max > 0.0) {
        y_max = 1.0;
    }
    y_max *= 1.05;
    let px = |t: f64| left + (t - 1.0) / (t_max - 1.0) * (w - left - right);
    let py = |y: f64| h - bottom - (y / y_max) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="15" text-anchor="middle" font-family="sans-serif">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for k in 0..=4 {
        let y = y_max * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end" font-family="sans-serif">{:.4}</text>"#,
            left - 6.0,
            py(y) + 4.0,
            y
        );
        let t = 1.0 + (t_max - 1.0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            px(t),
            h - bottom + 16.0,
            t.round()
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">round t</text>"#, (left + w - right) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 16 {})">average reward per round</text>"#, (top + h - bottom) / 2.0, (top + h - bottom) / 2.0);
    for (i, (name, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = points.iter().map(|&(t, y)| format!("{:.2},{:.2}", px(t as f64), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 8.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - right - 150.0, w - right - 125.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif">{}</text>"#, w - right - 118.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
