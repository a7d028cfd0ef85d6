//! LSTM cell built from tape primitives. One parameter set is shared by
//! every sequence it processes; sharing is enforced by passing the same
//! [`LstmVars`] for each vehicle.

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::rng::Rng;

/// Gate parameter handles on a tape: `w` is `[4*hidden, input]`, `u` is
/// `[4*hidden, hidden]`, `b` is `[4*hidden]`. Gate order is (input, forget,
/// candidate, output).
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Register freshly initialized LSTM parameters under `prefix.{w,u,b}`.
/// The forget-gate bias starts at 1.
pub fn init_lstm_params(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut Rng,
) {
    store.init_uniform(format!("{prefix}.w"), &[4 * hidden, input], rng);
    store.init_uniform(format!("{prefix}.u"), &[4 * hidden, hidden], rng);
    let mut bias = vec![0.0; 4 * hidden];
    bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
    store.insert(format!("{prefix}.b"), &[4 * hidden], bias);
}

/// One LSTM cell update.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let wsh = tape.shape(p.w).to_vec();
    let ush = tape.shape(p.u).to_vec();
    if wsh.len() != 2 || ush.len() != 2 || wsh[0] != ush[0] || !wsh[0].is_multiple_of(4) {
        return Err(Error::shape("lstm_step gate weights", &wsh, &ush));
    }
    let hidden = wsh[0] / 4;
    if tape.shape(x) != [wsh[1]] {
        return Err(Error::shape("lstm_step input", &[wsh[1]], tape.shape(x)));
    }
    if tape.shape(h) != [hidden] || tape.shape(c) != [hidden] {
        return Err(Error::shape("lstm_step state", &[hidden], tape.shape(h)));
    }

    let wx = tape.matvec(p.w, x)?;
    let uh = tape.matvec(p.u, h)?;
    let pre = tape.add(wx, uh)?;
    let z = tape.add(pre, p.b)?;

    let zi = tape.slice(z, 0, hidden)?;
    let zf = tape.slice(z, hidden, hidden)?;
    let zg = tape.slice(z, 2 * hidden, hidden)?;
    let zo = tape.slice(z, 3 * hidden, hidden)?;

    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);

    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_lstm(tape: &mut Tape, input: usize, hidden: usize) -> LstmVars {
        LstmVars {
            w: tape.zeros(&[4 * hidden, input]),
            u: tape.zeros(&[4 * hidden, hidden]),
            b: tape.zeros(&[4 * hidden]),
        }
    }

    #[test]
    fn zero_params_zero_cell() {
        let mut tape = Tape::new();
        let p = zero_lstm(&mut tape, 3, 4);
        let x = tape.zeros(&[3]);
        let h = tape.zeros(&[4]);
        let c = tape.zeros(&[4]);
        let (h1, c1) = lstm_step(&mut tape, &p, x, h, c).unwrap();
        assert!(tape.values(h1).iter().all(|v| *v == 0.0));
        assert!(tape.values(c1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_params_unit_cell_closed_form() {
        // With zero params every gate is 0.5 and the candidate is 0, so
        // c' = 0.5 * c and h' = 0.5 * tanh(0.5 * c).
        let mut tape = Tape::new();
        let p = zero_lstm(&mut tape, 2, 3);
        let x = tape.zeros(&[2]);
        let h = tape.zeros(&[3]);
        let c = tape.leaf_vector(vec![1.0, 1.0, 1.0]);
        let (h1, c1) = lstm_step(&mut tape, &p, x, h, c).unwrap();
        for v in tape.values(c1) {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let expect_h = 0.5 * (0.5f64).tanh();
        for v in tape.values(h1) {
            assert!((v - expect_h).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        init_lstm_params(&mut store, "lstm", 3, 4, &mut rng);
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let p = LstmVars {
                w: bound.var("lstm.w"),
                u: bound.var("lstm.u"),
                b: bound.var("lstm.b"),
            };
            let x = tape.leaf_vector(vec![0.1, -0.2, 0.3]);
            let h = tape.leaf_vector(vec![0.0, 0.1, 0.2, 0.3]);
            let c = tape.leaf_vector(vec![0.5, -0.5, 0.25, 0.0]);
            let (h1, _) = lstm_step(&mut tape, &p, x, h, c).unwrap();
            tape.values(h1).to_vec()
        };
        assert_eq!(run(&store), run(&store));
    }

    #[test]
    fn input_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let p = zero_lstm(&mut tape, 3, 4);
        let x = tape.zeros(&[5]);
        let h = tape.zeros(&[4]);
        let c = tape.zeros(&[4]);
        assert!(lstm_step(&mut tape, &p, x, h, c).is_err());
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        init_lstm_params(&mut store, "enc", 2, 5, &mut rng);
        let b = &store.get("enc.b").unwrap().values;
        assert!(b[0..5].iter().all(|v| *v == 0.0));
        assert!(b[5..10].iter().all(|v| *v == 1.0));
        assert!(b[10..20].iter().all(|v| *v == 0.0));
    }
}
