//! Text rendering of hbar series: `y1*y2 + (1/4)ℏ + (...)ℏ^2`.

use kweights::series::HbarSeries;

pub fn hbar_series(s: &HbarSeries) -> String {
    let mut parts = Vec::new();
    for n in 0..=s.order() {
        let c = s.coeff(n);
        if c.is_zero() {
            continue;
        }
        let body = c.to_string();
        parts.push(match n {
            0 => body,
            1 => format!("({body})ℏ"),
            _ => format!("({body})ℏ^{n}"),
        });
    }
    if parts.is_empty() {
        "0".to_string()
    } else {
        parts.join(" + ")
    }
}

pub fn hbar_series_json(s: &HbarSeries) -> serde_json::Value {
    let orders: Vec<_> = (0..=s.order())
        .filter(|&n| !s.coeff(n).is_zero())
        .map(|n| serde_json::json!({ "power": n, "value": s.coeff(n).to_string() }))
        .collect();
    serde_json::json!(orders)
}
