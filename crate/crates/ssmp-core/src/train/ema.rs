//! Teacher/student parameter pair and the EMA momentum schedule.

use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Two shape-congruent parameter sets. The optimizer only ever touches the
/// student; the teacher changes exclusively through [`ema_update`].
#[derive(Debug, Clone)]
pub struct TeacherStudentState {
    pub teacher: ParamSet,
    pub student: ParamSet,
    pub step: u64,
}

impl TeacherStudentState {
    /// Initializes the student as an exact copy of the teacher.
    pub fn from_teacher(teacher: ParamSet) -> Self {
        TeacherStudentState {
            student: teacher.clone(),
            teacher,
            step: 0,
        }
    }
}

/// `teacher = alpha * teacher + (1 - alpha) * student`, element-wise over
/// every entry (parameters and statistics buffers alike).
pub fn ema_update(state: &mut TeacherStudentState, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha = {alpha} outside [0, 1]")));
    }
    state.teacher.blend(&state.student, alpha)
}

/// Cosine ramp of the EMA momentum from `alpha0` at step 0 to exactly 1 at
/// step `total`; monotone non-decreasing in between.
pub fn alpha_schedule(step: u64, total: u64, alpha0: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let t = (step.min(total)) as f64 / total as f64;
    1.0 - (1.0 - alpha0) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn toy_state(seed: u64) -> TeacherStudentState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut teacher = ParamSet::new();
        teacher.add("a", Tensor::uniform(&[3, 2], -1.0, 1.0, &mut rng), true);
        teacher.add("b", Tensor::uniform(&[4], -1.0, 1.0, &mut rng), false);
        let mut state = TeacherStudentState::from_teacher(teacher);
        // Push the student away from the teacher.
        for id in 0..state.student.len() {
            let bump = rng.random_range(0.1..0.5);
            let bumped = state.student.get(id).map(|v| v + bump);
            state.student.set(id, bumped);
        }
        state
    }

    #[test]
    fn alpha_edge_cases_are_bit_exact() {
        let mut state = toy_state(0);
        let before = state.teacher.checksum();
        ema_update(&mut state, 1.0).unwrap();
        assert_eq!(state.teacher.checksum(), before);
        ema_update(&mut state, 0.0).unwrap();
        assert_eq!(state.teacher.checksum(), state.student.checksum());
    }

    #[test]
    fn scalar_hand_case() {
        let mut teacher = ParamSet::new();
        teacher.add("x", Tensor::scalar(2.0), true);
        let mut state = TeacherStudentState::from_teacher(teacher);
        state.student.set(0, Tensor::scalar(4.0));
        ema_update(&mut state, 0.5).unwrap();
        assert_eq!(state.teacher.get(0).item(), 3.0);
    }

    #[test]
    fn k_step_geometric_series_identity() {
        // With a frozen student and constant alpha, k updates give
        // teacher = alpha^k * teacher0 + (1 - alpha^k) * student.
        let mut state = toy_state(1);
        let teacher0 = state.teacher.clone();
        let alpha = 0.9;
        let k = 17;
        for _ in 0..k {
            ema_update(&mut state, alpha).unwrap();
        }
        let ak = alpha.powi(k);
        for id in 0..state.teacher.len() {
            for ((got, &t0), &s) in state
                .teacher
                .get(id)
                .data()
                .iter()
                .zip(teacher0.get(id).data())
                .zip(state.student.get(id).data())
            {
                let expected = ak * t0 + (1.0 - ak) * s;
                assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn rejects_bad_alpha_and_shape_mismatch() {
        let mut state = toy_state(2);
        assert!(ema_update(&mut state, 1.5).is_err());
        let mut other = ParamSet::new();
        other.add("a", Tensor::zeros(&[3, 2]), true);
        state.student = other;
        assert!(ema_update(&mut state, 0.5).is_err());
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let a0 = 0.9996;
        assert_eq!(alpha_schedule(0, 100, a0), a0);
        assert_eq!(alpha_schedule(100, 100, a0), 1.0);
        let mid = alpha_schedule(50, 100, a0);
        assert!((mid - 0.9998).abs() < 1e-12, "midpoint {mid}");
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_nondecreasing(total in 1u64..1000) {
            let a0 = 0.9996;
            let mut last = 0.0;
            for t in 0..=total {
                let a = alpha_schedule(t, total, a0);
                prop_assert!(a >= last - 1e-15);
                prop_assert!((a0..=1.0).contains(&a));
                last = a;
            }
        }
    }
}
