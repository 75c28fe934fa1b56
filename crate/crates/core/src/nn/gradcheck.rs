use super::{Gradients, Mlp};

/// Central-difference estimate of `d loss / d θ` for every weight and bias.
///
/// Costs two loss evaluations per parameter; intended for small test networks.
pub fn numeric_grad_oracle<F>(mut loss_fn: F, mlp: &Mlp, h: f64) -> Gradients
where
    F: FnMut(&Mlp) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = mlp.clone();
    let mut grads = Gradients::zeros_like(mlp);
    for l in 0..mlp.layers().len() {
        let (rows, cols) = mlp.layers()[l].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.layers()[l].weight[[r, c]];
                probe.layers_mut()[l].weight[[r, c]] = orig + h;
                let up = loss_fn(&probe);
                probe.layers_mut()[l].weight[[r, c]] = orig - h;
                let down = loss_fn(&probe);
                probe.layers_mut()[l].weight[[r, c]] = orig;
                grads.weights[l][[r, c]] = (up - down) / (2.0 * h);
            }
        }
        for r in 0..rows {
            let orig = probe.layers()[l].bias[r];
            probe.layers_mut()[l].bias[r] = orig + h;
            let up = loss_fn(&probe);
            probe.layers_mut()[l].bias[r] = orig - h;
            let down = loss_fn(&probe);
            probe.layers_mut()[l].bias[r] = orig;
            grads.biases[l][r] = (up - down) / (2.0 * h);
        }
    }
    grads
}
