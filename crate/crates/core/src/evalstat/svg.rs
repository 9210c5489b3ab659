use std::fmt::Write;

use super::RocPoint;

/// Standalone SVG plot of a ROC curve: sensitivity against 1 - specificity.
pub fn roc_svg(points: &[RocPoint], title: &str, auc: f64) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let x = |fpr: f64| PAD + fpr * SIZE;
    let y = |tpr: f64| PAD + (1.0 - tpr) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ =
        writeln!(s, r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##, x(0.0), y(0.0), x(1.0), y(1.0));
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{v:.2}</text>"#, x(v), PAD + SIZE + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.2}</text>"#, PAD - 6.0, y(v) + 4.0);
    }
    let poly: Vec<String> = points.iter().map(|p| format!("{:.3},{:.3}", x(p.fpr), y(p.tpr))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##, poly.join(" "));
    let _ =
        writeln!(s, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">1 - specificity</text>"#, PAD + SIZE / 2.0, total - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {})">sensitivity</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" font-size="14" text-anchor="middle">{} (AUC {:.4})</text>"#,
        PAD + SIZE / 2.0,
        escape(title),
        auc
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
