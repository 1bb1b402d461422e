use rand::Rng;

use super::{xavier_matrix, ParamSet, Tape, Tensor, TensorError, Var};

/// Registers and names the nine tensors of one GRU cell under a prefix.
pub struct GruParams;

impl GruParams {
    pub const FIELDS: [&'static str; 9] = [
        "w_xz", "w_hz", "b_z", "w_xr", "w_hr", "b_r", "w_xh", "w_hh", "b_h",
    ];

    pub fn register<R: Rng>(rng: &mut R, params: &mut ParamSet, prefix: &str, d: usize) {
        for field in Self::FIELDS {
            let t = if field.starts_with('b') {
                Tensor::vector(vec![0.0; d])
            } else {
                xavier_matrix(rng, d, d)
            };
            params.insert(format!("{prefix}.{field}"), t);
        }
    }
}

/// Tape handles for one GRU cell's weights, in [`GruParams::FIELDS`] order.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_xz: Var,
    pub w_hz: Var,
    pub b_z: Var,
    pub w_xr: Var,
    pub w_hr: Var,
    pub b_r: Var,
    pub w_xh: Var,
    pub w_hh: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn from_vars(v: [Var; 9]) -> Self {
        GruVars {
            w_xz: v[0],
            w_hz: v[1],
            b_z: v[2],
            w_xr: v[3],
            w_hr: v[4],
            b_r: v[5],
            w_xh: v[6],
            w_hh: v[7],
            b_h: v[8],
        }
    }
}

/// One GRU step over a batch of rows: update gate z, reset gate r,
/// tanh candidate, output (1-z) (*) h_prev + z (*) candidate.
/// `x` and `h_prev` are (n,d).
pub fn gru_cell(tape: &mut Tape, x: Var, h_prev: Var, w: &GruVars) -> Result<Var, TensorError> {
    if tape.shape(x) != tape.shape(h_prev) {
        return Err(TensorError::ShapeMismatch {
            op: "gru_cell",
            details: format!(
                "x {:?} vs h_prev {:?}",
                tape.shape(x),
                tape.shape(h_prev)
            ),
        });
    }
    let xz = tape.matmul(x, w.w_xz)?;
    let hz = tape.matmul(h_prev, w.w_hz)?;
    let z_pre = tape.add(xz, hz)?;
    let z_pre = tape.add_row(z_pre, w.b_z)?;
    let z = tape.sigmoid(z_pre);

    let xr = tape.matmul(x, w.w_xr)?;
    let hr = tape.matmul(h_prev, w.w_hr)?;
    let r_pre = tape.add(xr, hr)?;
    let r_pre = tape.add_row(r_pre, w.b_r)?;
    let r = tape.sigmoid(r_pre);

    let gated_h = tape.mul(r, h_prev)?;
    let xh = tape.matmul(x, w.w_xh)?;
    let hh = tape.matmul(gated_h, w.w_hh)?;
    let c_pre = tape.add(xh, hh)?;
    let c_pre = tape.add_row(c_pre, w.b_h)?;
    let cand = tape.tanh(c_pre);

    let neg_z = tape.neg(z);
    let one_minus_z = tape.add_const(neg_z, 1.0);
    let keep = tape.mul(one_minus_z, h_prev)?;
    let update = tape.mul(z, cand)?;
    tape.add(keep, update)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_gru(tape: &mut Tape, d: usize) -> GruVars {
        let vars: Vec<Var> = GruParams::FIELDS
            .iter()
            .map(|f| {
                let t = if f.starts_with('b') {
                    Tensor::vector(vec![0.0; d])
                } else {
                    Tensor::zeros(&[d, d])
                };
                tape.leaf(t, true)
            })
            .collect();
        GruVars::from_vars(vars.try_into().unwrap())
    }

    #[test]
    fn zero_weights_halve_previous_state() {
        let d = 4;
        let mut tape = Tape::new();
        let w = zero_gru(&mut tape, d);
        let x = tape.constant(Tensor::matrix(1, d, vec![0.7, -1.0, 2.0, 0.1]).unwrap());
        let h = tape.constant(Tensor::matrix(1, d, vec![2.0, 4.0, -6.0, 1.0]).unwrap());
        let out = gru_cell(&mut tape, x, h, &w).unwrap();
        // z = 0.5, candidate = 0 -> out = 0.5 * h_prev
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, -3.0, 0.5]);
    }

    #[test]
    fn zero_everything_gives_zero_output() {
        let d = 3;
        let mut tape = Tape::new();
        let w = zero_gru(&mut tape, d);
        let x = tape.constant(Tensor::zeros(&[1, d]));
        let h = tape.constant(Tensor::zeros(&[1, d]));
        let out = gru_cell(&mut tape, x, h, &w).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let w = zero_gru(&mut tape, 3);
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let h = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(gru_cell(&mut tape, x, h, &w).is_err());
    }
}
