use super::{Result, Tape, Tensor, Var};

/// Compares the tape gradient of `loss_fn` at `input` with central
/// differences of step `h`, returning the worst coordinate's
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(loss_fn: F, input: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let loss = loss_fn(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape.grad(x).expect("leaf receives a gradient").to_vec();

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(t);
        let loss = loss_fn(&mut tape, x)?;
        Ok(tape.value(loss).item())
    };

    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = input.clone();
        plus.values_mut()[i] += h;
        let mut minus = input.clone();
        minus.values_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
