//! Hand-written SVG charts of constraint values across iterations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{KnockoffError, Result};
use crate::harness::trace::DetailEntry;
use crate::moments::{ConstraintSet, MomentFamily, Variant};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 540.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
/// From this many features on, only quintile-representative pairs are drawn.
pub const QUINTILE_MIN_FEATURES: usize = 8;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// One polyline: the achieved value of a constraint over iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub pair: (usize, usize),
    pub variant: Variant,
    pub slot: usize,
    pub points: Vec<(usize, f64)>,
}

/// Curves and target lines of one moment family, ready to draw.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyChart {
    pub family: MomentFamily,
    pub pairs: Vec<(usize, usize)>,
    pub curves: Vec<Curve>,
    /// `(pair, slot, target)`, one per distinct target.
    pub targets: Vec<((usize, usize), usize, f64)>,
}

/// Pairs at the 0, 20, ..., 100 % quantiles of the initial squared deviation.
fn quintile_pairs(first: &DetailEntry, family: MomentFamily) -> Vec<(usize, usize)> {
    let mut spread: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for v in first.values.iter().filter(|v| v.key.family() == family) {
        *spread.entry((v.key.left, v.key.right)).or_default() += v.deviation().powi(2);
    }
    let mut ranked: Vec<_> = spread.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let last = ranked.len().saturating_sub(1) as f64;
    let mut picked: Vec<(usize, usize)> = (0..=5).map(|q| ranked[(q as f64 / 5.0 * last).round() as usize].0).collect();
    picked.sort();
    picked.dedup();
    picked
}

pub fn family_chart(detail: &[DetailEntry], cs: &ConstraintSet, family: MomentFamily) -> Result<FamilyChart> {
    let first = detail.first().ok_or_else(|| {
        KnockoffError::InvalidInput("trace has no per-constraint detail; rerun with --detail-trace".into())
    })?;
    let pairs: Vec<(usize, usize)> = if cs.num_features() >= QUINTILE_MIN_FEATURES {
        quintile_pairs(first, family)
    } else {
        cs.pairs().iter().map(|t| (t.left, t.right)).collect()
    };
    let mut curves = Vec::new();
    let mut targets = Vec::new();
    for c in cs.group(family) {
        let pair = (c.key.left, c.key.right);
        if !pairs.contains(&pair) {
            continue;
        }
        let variant = c.key.variant().expect("constraints involve a knockoff");
        let slot = c.key.slot();
        let points = detail
            .iter()
            .map(|e| {
                e.values
                    .iter()
                    .find(|v| v.key == c.key)
                    .map(|v| (e.iteration, v.achieved))
                    .ok_or_else(|| KnockoffError::InvalidInput(format!("detail trace lacks {:?}", c.key)))
            })
            .collect::<Result<Vec<_>>>()?;
        curves.push(Curve { pair, variant, slot, points });
        if !targets.iter().any(|&(p, s, _)| p == pair && s == slot) {
            targets.push((pair, slot, c.target));
        }
    }
    Ok(FamilyChart { family, pairs, curves, targets })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl FamilyChart {
    pub fn to_svg(&self, title: &str) -> String {
        let x_max = self.curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).max().unwrap_or(0).max(1) as f64;
        let values =
            self.curves.iter().flat_map(|c| c.points.iter().map(|p| p.1)).chain(self.targets.iter().map(|t| t.2));
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(1e-3);
        (lo, hi) = (lo - pad, hi + pad);
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + x / x_max * plot_w;
        let sy = |y: f64| MARGIN_TOP + (hi - y) / (hi - lo) * plot_h;
        let color = |pair: (usize, usize)| {
            let idx = self.pairs.iter().position(|&p| p == pair).unwrap_or(0);
            PALETTE[idx % PALETTE.len()]
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, "<title>{}</title>", escape(title));
        let _ = writeln!(s, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            escape(title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444444"/>"##
        );
        for i in 0..=4 {
            let y = lo + (hi - lo) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{:.2}" text-anchor="end" fill="#444444">{:.3}</text>"##,
                MARGIN_LEFT - 6.0,
                sy(y) + 4.0,
                y
            );
        }
        let ticks = x_max as usize;
        let every = (ticks / 10).max(1);
        for t in (0..=ticks).step_by(every) {
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{}" text-anchor="middle" fill="#444444">{t}</text>"##,
                sx(t as f64),
                HEIGHT - MARGIN_BOTTOM + 18.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 10.0
        );

        for &(pair, _, target) in &self.targets {
            let _ = writeln!(
                s,
                r#"<line class="target" x1="{:.2}" x2="{:.2}" y1="{:.4}" y2="{:.4}" stroke="{}" stroke-width="1" stroke-dasharray="1 4" stroke-linecap="round"/>"#,
                sx(0.0),
                sx(x_max),
                sy(target),
                sy(target),
                color(pair)
            );
        }
        for c in &self.curves {
            let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.4}", sx(x as f64), sy(y))).collect();
            let (class, dash) = match c.variant {
                Variant::BothKnockoff => ("knockoff-knockoff", r#" stroke-dasharray="6 4""#),
                _ => ("feature-knockoff", ""),
            };
            let _ = writeln!(
                s,
                r#"<polyline class="{class}" points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                pts.join(" "),
                color(c.pair)
            );
        }

        let lx = WIDTH - MARGIN_RIGHT + 15.0;
        for (i, &pair) in self.pairs.iter().enumerate() {
            let y = MARGIN_TOP + 10.0 + i as f64 * 18.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" x2="{}" y1="{y}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">x{}, x{}</text>"#,
                lx + 20.0,
                color(pair),
                lx + 26.0,
                y + 4.0,
                pair.0 + 1,
                pair.1 + 1
            );
        }
        let y = MARGIN_TOP + 20.0 + self.pairs.len() as f64 * 18.0;
        let legend = [
            ("", "feature-knockoff"),
            (r#" stroke-dasharray="6 4""#, "knockoff-knockoff"),
            (r#" stroke-dasharray="1 4" stroke-linecap="round""#, "target"),
        ];
        for (i, (dash, label)) in legend.iter().enumerate() {
            let yy = y + i as f64 * 18.0;
            let _ = writeln!(
                s,
                r##"<line x1="{lx}" x2="{}" y1="{yy}" y2="{yy}" stroke="#000000" stroke-width="1.5"{dash}/><text x="{}" y="{}">{label}</text>"##,
                lx + 20.0,
                lx + 26.0,
                yy + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Writes `correlation.svg`, `coskewness.svg` and `cokurtosis.svg` into
/// `out_dir`. Nothing is written unless the trace has detail entries.
pub fn emit_plots(detail: &[DetailEntry], cs: &ConstraintSet, n: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if detail.is_empty() {
        return Err(KnockoffError::InvalidInput(
            "trace has no per-constraint detail; rerun with --detail-trace".into(),
        ));
    }
    let charts = MomentFamily::ALL.iter().map(|&f| family_chart(detail, cs, f)).collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for chart in charts {
        let name = chart.family.name();
        let mut title =
            format!("{}{} constraint, p={}, n={n}", name[..1].to_uppercase(), &name[1..], cs.num_features());
        if cs.num_features() >= QUINTILE_MIN_FEATURES {
            title.push_str(" (quintile pairs)");
        }
        let path = out_dir.join(format!("{name}.svg"));
        std::fs::write(&path, chart.to_svg(&title))?;
        written.push(path);
    }
    Ok(written)
}
