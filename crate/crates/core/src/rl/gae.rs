use super::RlError;

/// Generalized advantage estimation over one rollout.
///
/// `values` has one more entry than `rewards` (the bootstrap value).
/// `dones[t]` marks the transition at `t` as terminal, so nothing after it
/// flows back into `t`. Returns `(advantages, returns)`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(RlError::Length(format!(
            "{n} rewards need {} values and {n} dones, got {} and {}",
            n + 1,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_zero_is_one_step() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4, 9.0];
        let (a, ret) = gae(&r, &v, &[false; 3], 0.0, 0.95).unwrap();
        for t in 0..3 {
            assert_eq!(a[t], r[t] - v[t]);
            assert_eq!(ret[t], a[t] + v[t]);
        }
    }

    #[test]
    fn done_blocks_propagation() {
        let v = [0.1, 0.2, 0.3, 0.4, 0.5];
        let dones = [false, true, false, false];
        let (a, _) = gae(&[1.0, 1.0, 1.0, 1.0], &v, &dones, 0.99, 0.95).unwrap();
        let (b, _) = gae(&[1.0, 1.0, 50.0, 1.0], &[0.1, 0.2, 7.0, 0.4, 0.5], &dones, 0.99, 0.95).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn length_mismatch() {
        assert!(gae(&[1.0], &[1.0], &[false], 0.9, 0.9).is_err());
        assert!(gae(&[1.0], &[1.0, 2.0], &[], 0.9, 0.9).is_err());
    }
}
