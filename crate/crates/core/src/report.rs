//! CSV exports of valuation results. Every file has a header row and rows in
//! a fixed order.

use std::io::Write;

use ndarray::ArrayView2;

use crate::dynamic::{BucketDiagnostics, PathPanel, PeriodDiagnostics, Rebalancing, ValuationPath};
use crate::error::Result;
use crate::risk::{self, Sample};
use crate::scalar::{mean, Real};
use crate::valuation::FairValue;

/// Quantile levels of the fan charts: the 95%, 80% and 50% bands and the median.
pub const FAN_LEVELS: [f64; 7] = [0.025, 0.10, 0.25, 0.50, 0.75, 0.90, 0.975];

fn fan_header(first: &str) -> Vec<String> {
    let mut h = vec![first.to_string(), "mean".to_string()];
    h.extend(FAN_LEVELS.iter().map(|q| format!("p{}", q * 100.0)));
    h
}

fn fan_row<T: Real>(values: &[T]) -> Result<Vec<String>> {
    let s = Sample::new(values.to_vec())?;
    let mut row = vec![mean(values).as_f64().to_string()];
    for q in FAN_LEVELS {
        row.push(risk::var(&s, T::lit(q))?.as_f64().to_string());
    }
    Ok(row)
}

/// Per date: mean and quantiles of the fair values across paths.
pub fn write_fanchart<T: Real, W: Write>(out: W, fair_values: ArrayView2<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(fan_header("time"))?;
    for (t, col) in fair_values.columns().into_iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(fan_row(&col.to_vec())?);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table2<T: Real, W: Write>(out: W, diags: &[PeriodDiagnostics<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "var", "kb_error", "dtvar"])?;
    for d in diags {
        w.write_record([d.time.to_string(), d.var.as_f64().to_string(), d.kb_error.as_f64().to_string(), d.dtvar.as_f64().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_conditional<T: Real, W: Write>(out: W, buckets: &[BucketDiagnostics<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "bucket", "state_low", "state_high", "var", "coverage"])?;
    for b in buckets {
        w.write_record([
            b.time.to_string(),
            b.bucket.to_string(),
            b.state_low.as_f64().to_string(),
            b.state_high.as_f64().to_string(),
            b.var.as_f64().to_string(),
            b.coverage.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per rebalancing date and for the discounted total: mean, quantiles and
/// the fraction of paths where the capital can be raised.
pub fn write_rebalancing<T: Real, W: Write>(out: W, rb: &Rebalancing<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = fan_header("time");
    header.push("coverage".into());
    w.write_record(&header)?;
    for (k, col) in rb.costs.columns().into_iter().enumerate() {
        let mut row = vec![(k + 1).to_string()];
        row.extend(fan_row(&col.to_vec())?);
        row.push(rb.coverage[k].to_string());
        w.write_record(row)?;
    }
    if !rb.total.is_empty() {
        let mut row = vec!["total".to_string()];
        row.extend(fan_row(&rb.total)?);
        row.push(String::new());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn grid_axis<T: Real>(values: &[T], points: usize) -> Result<Vec<T>> {
    let s = Sample::new(values.to_vec())?;
    let lo = risk::var(&s, T::lit(0.01))?;
    let hi = risk::var(&s, T::lit(0.99))?;
    if hi <= lo || points < 2 {
        return Ok(vec![lo]);
    }
    Ok((0..points).map(|k| lo + (hi - lo) * T::from_usize_lossy(k) / T::from_usize_lossy(points - 1)).collect())
}

/// Fitted strategies on a grid spanning the 1%-99% range of the first two
/// state variables (others at their median), per period.
pub fn write_strategy_grid<T: Real, W: Write>(out: W, path: &ValuationPath<T>, panel: &PathPanel<T>, points: usize) -> Result<()> {
    let n = panel.n_assets();
    let m_feat = panel.features[0].ncols();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((0..m_feat).map(|f| format!("z{f}")));
    header.extend((0..n).map(|j| format!("theta_{j}")));
    header.extend((0..n).map(|j| format!("xi_{j}")));
    w.write_record(&header)?;
    for p in &path.periods {
        let feats = &panel.features[p.t];
        let mut base = Vec::with_capacity(m_feat);
        for f in 0..m_feat {
            base.push(risk::var(&Sample::new(feats.column(f).to_vec())?, T::lit(0.5))?);
        }
        let ax0 = grid_axis(&feats.column(0).to_vec(), points)?;
        let ax1 = if m_feat > 1 { grid_axis(&feats.column(1).to_vec(), points)? } else { vec![T::zero()] };
        for a in &ax0 {
            for b in &ax1 {
                let mut z = base.clone();
                z[0] = *a;
                if m_feat > 1 {
                    z[1] = *b;
                }
                let th = p.quadratic.predict(&z)?;
                let xi = p.quantile.predict(&z)?;
                let mut row = vec![p.t.to_string()];
                row.extend(z.iter().chain(&th).chain(&xi).map(|v| v.as_f64().to_string()));
                w.write_record(row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Equal-width histogram with density normalised to integrate to one.
pub fn histogram<T: Real>(values: &[T], bins: usize) -> Vec<(f64, f64, usize, f64)> {
    let xs: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for x in &xs {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let total = xs.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c, c as f64 / (total * width)))
        .collect()
}

/// Histograms of several named samples in long format.
pub fn write_histograms<T: Real, W: Write>(out: W, series: &[(&str, &[T])], bins: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", "bin_low", "bin_high", "count", "density"])?;
    for (name, values) in series {
        for (lo, hi, c, d) in histogram(values, bins) {
            w.write_record([name.to_string(), lo.to_string(), hi.to_string(), c.to_string(), d.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Empirical cdfs of several named samples at `points` probability levels.
pub fn write_cdfs<T: Real, W: Write>(out: W, series: &[(&str, &[T])], points: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", "value", "probability"])?;
    for (name, values) in series {
        let s = Sample::new(values.to_vec())?;
        for k in 1..=points {
            let p = k as f64 / (points + 1) as f64;
            w.write_record([name.to_string(), risk::var(&s, T::lit(p))?.as_f64().to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per strategy: units of each asset and cost.
pub fn write_strategies<T: Real, W: Write>(out: W, rows: &[(&str, &[T], T)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.1.len());
    let mut header = vec!["strategy".to_string(), "riskfree".to_string()];
    header.extend((1..n).map(|j| if n == 2 { "risky".to_string() } else { format!("risky_{j}") }));
    header.push("cost".into());
    w.write_record(&header)?;
    for (name, units, cost) in rows {
        let mut row = vec![name.to_string()];
        row.extend(units.iter().map(|u| u.as_f64().to_string()));
        row.push(cost.as_f64().to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fair_values<T: Real, W: Write>(out: W, rows: &[(&str, &FairValue<T>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "value", "hedge_cost", "capital_cost"])?;
    for (name, fv) in rows {
        w.write_record([name.to_string(), fv.value.as_f64().to_string(), fv.hedge_cost.as_f64().to_string(), fv.capital_cost.as_f64().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a CSV file as string records, header first.
pub fn read_records(text: &str) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        out.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(out)
}

/// `S - xi(T) . Y(T)` per path.
pub fn final_loss<T: Real>(path: &ValuationPath<T>) -> Vec<T> {
    path.periods.last().map(|p| p.residuals.clone()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn fanchart_has_header_and_ordered_rows() {
        let fv = Array2::from_shape_fn((100, 3), |(i, t)| (i as f64) * (t as f64 + 1.0));
        let mut buf = Vec::new();
        write_fanchart(&mut buf, fv.view()).unwrap();
        let rows = read_records(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(rows[0], ["time", "mean", "p2.5", "p10", "p25", "p50", "p75", "p90", "p97.5"]);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1][0], "0");
        assert_eq!(rows[3][0], "2");
        // ceil(0.5 * 100) - 1 = 49 times 3
        assert_eq!(rows[3][5], "147");
    }

    #[test]
    fn histogram_density_integrates_to_one() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = histogram(&xs, 20);
        let area: f64 = h.iter().map(|(lo, hi, _, d)| (hi - lo) * d).sum();
        assert!((area - 1.0).abs() < 1e-12);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 1000);
        let flat = histogram(&[2.0; 5], 4);
        assert_eq!(flat[0].2, 5);
    }
}
