//! Self-contained SVG learning curves.

use std::fmt::Write as _;

use super::CliError;

/// Moving-average window used for every plotted curve.
pub const SMOOTHING_WINDOW: usize = 10;

/// Trailing moving average; the first `window − 1` points average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// A numeric CSV: the first column is the x axis, the rest are series.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn parse_table(text: &str) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Format(format!("header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(CliError::Format(
            "need an x column and at least one series column".into(),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Format(format!("row {row}: {e}")))?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Format(format!("row {row}, column {}: not a number: {f:?}", headers[c]))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(CliError::Format("no data rows".into()));
    }
    Ok(Table { headers, rows })
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Renders every series of `table`, each smoothed with [`SMOOTHING_WINDOW`].
/// The raw table is embedded in a comment block.
pub fn render_svg(table: &Table, title: &str) -> String {
    let xs: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let series: Vec<(String, Vec<f64>)> = (1..table.headers.len())
        .map(|c| {
            let ys: Vec<f64> = table.rows.iter().map(|r| r[c]).collect();
            (table.headers[c].clone(), moving_average(&ys, SMOOTHING_WINDOW))
        })
        .collect();
    let (x0, x1) = span(xs.iter().copied());
    let (y0, y1) = span(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    s.push_str("<!--\n");
    s.push_str(&table.headers.join(","));
    s.push('\n');
    for r in &table.rows {
        let line: Vec<String> = r.iter().map(f64::to_string).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s.push_str("-->\n");
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="25" text-anchor="middle" font-family="sans-serif" font-size="14">{} (moving average, window {SMOOTHING_WINDOW})</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{m},{t} {m},{b} {r},{b}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (v, y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#,
            MARGIN - 4.0,
            fmt_tick(v)
        );
    }
    for (v, x) in [(x0, MARGIN), (x1, WIDTH - MARGIN)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            HEIGHT - MARGIN + 14.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(&table.headers[0])
    );
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0 - 120.0,
            MARGIN + 14.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_ten_example() {
        let mut v = vec![0.0; 9];
        v.push(10.0);
        assert_eq!(*moving_average(&v, 10).last().unwrap(), 1.0);
    }

    #[test]
    fn constant_series_stays_flat() {
        let ma = moving_average(&[3.0; 25], 10);
        assert!(ma.iter().all(|&x| x == 3.0));
        let t = parse_table("x,y\n0,3\n1,3\n2,3\n").unwrap();
        let svg = render_svg(&t, "flat");
        let line = svg.lines().find(|l| l.contains("stroke-width")).unwrap();
        let ys: Vec<&str> = line
            .split('"')
            .nth(1)
            .unwrap()
            .split(' ')
            .map(|p| p.split(',').nth(1).unwrap())
            .collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn malformed_rows_are_numbered() {
        let e = parse_table("x,y\n0,1\n1,oops\n").unwrap_err().to_string();
        assert!(e.contains("row 2"), "{e}");
        assert!(parse_table("x,y\n").is_err());
        assert!(parse_table("").is_err());
    }

    #[test]
    fn data_embedded_in_comment() {
        let t = parse_table("update_idx,l_total\n1,0.5\n2,0.25\n").unwrap();
        let svg = render_svg(&t, "loss");
        assert!(svg.contains("<!--\nupdate_idx,l_total\n1,0.5\n2,0.25\n-->"));
    }
}
