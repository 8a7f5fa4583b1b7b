use std::f64::consts::PI;

/// Ricker wavelet sampled at `t = n dt`, delayed by `1.5 / f` so that it
/// starts near zero. Peak value 1 at the delay.
pub fn ricker_wavelet(central_frequency: f64, dt: f64, num_steps: usize) -> Vec<f64> {
    let t0 = 1.5 / central_frequency;
    let pf2 = (PI * central_frequency).powi(2);
    (0..num_steps)
        .map(|n| {
            let tau = n as f64 * dt - t0;
            let a = pf2 * tau * tau;
            (1.0 - 2.0 * a) * (-a).exp()
        })
        .collect()
}
