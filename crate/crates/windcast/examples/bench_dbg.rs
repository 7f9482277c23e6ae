use std::time::Instant;
use windcast::deepar::{train, DeepArConfig};
use windcast::series::{SplitSpec, TimeSeries};

fn main() {
    let sine: Vec<f64> = (0..2000)
        .map(|t| 25.0 + 20.0 * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin())
        .collect();
    let series = TimeSeries::from_target(0, sine.clone(), 54.0).unwrap();
    let (tr, va, te) = series.split(&SplitSpec::default(), 72).unwrap();
    let config = DeepArConfig {
        cell_kind: windcast::neural::CellKind::Lstm,
        layers: 2, hidden_units: 64, dropout: 0.2, learning_rate: 1e-3,
        context_length: 36, horizon: 36,
        max_epochs: 200, early_stopping_patience: 20,
        batch_size: 32, batches_per_epoch: 8,
        ..DeepArConfig::default()
    };
    let t0 = Instant::now();
    let (model, trace) = train(&config, &tr, &va, 1).unwrap();
    println!("trained {} epochs in {:.1?}, best val {:.4} at {}", trace.epochs.len(), t0.elapsed(), trace.best_validation_nll, trace.best_epoch);

    // forecast all test origins stride 36 using full-series context
    let n = series.len();
    let test_start = n - te.len();
    let mut y_all = vec![]; let mut med = vec![]; let mut lo = vec![]; let mut hi = vec![];
    let mut origin = test_start;
    while origin + 36 <= n {
        let w = series.extract_window(origin - 36, 36, 36, true);
        let d = model.forecast(&w, 200, origin as u64).unwrap();
        let pi = d.prediction_interval(0.05).unwrap();
        y_all.extend(w.future_target.unwrap());
        med.extend(pi.median); lo.extend(pi.lower); hi.extend(pi.upper);
        origin += 36;
    }
    let nrmse = windcast::metrics::nrmse(&y_all, &med).unwrap();
    let picp = windcast::metrics::picp(&y_all, &lo, &hi).unwrap();
    println!("test NRMSE {:.4}  PICP95 {:.4}  ({} points)", nrmse, picp, y_all.len());
}
