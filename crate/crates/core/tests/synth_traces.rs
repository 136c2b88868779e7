use haptic_core::synth::{synth_dataset, SynthConfig, UserSignature};

#[test]
fn generated_traces_satisfy_invariants() {
    let cfg = SynthConfig {
        num_users: 6,
        trials_per_task: 25,
        seed: 3,
        ..SynthConfig::default()
    };
    let data = synth_dataset(&cfg).unwrap();
    assert_eq!(data.len(), 6 * 7 * 25);
    for t in data.traces() {
        assert!(t.len() >= 4, "{}", t.key());
        let s = t.samples();
        assert!(s[0].timestamp >= 0.0);
        assert!(s.windows(2).all(|w| w[1].timestamp > w[0].timestamp), "{}", t.key());
        assert!(s.iter().all(|x| x.fx.is_finite() && x.fy.is_finite() && x.fz.is_finite()));
    }
}

#[test]
fn full_size_dataset_and_determinism() {
    let cfg = SynthConfig {
        duration_range: (0.05, 0.06),
        seed: 42,
        ..SynthConfig::default()
    };
    let a = synth_dataset(&cfg).unwrap();
    assert_eq!(a.len(), 12_600);
    assert_eq!(a.users().len(), 15);
    assert_eq!(a.tasks().len(), 7);
    assert_eq!(a, synth_dataset(&cfg).unwrap());
}

/// Mean DFT power of `fz` at `freq`, evaluated directly.
fn power_at(samples: &[f32], rate: f64, freq: f64) -> f64 {
    let mean = samples.iter().map(|&v| f64::from(v)).sum::<f64>() / samples.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &v) in samples.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * freq * i as f64 / rate;
        re += (f64::from(v) - mean) * phase.cos();
        im -= (f64::from(v) - mean) * phase.sin();
    }
    (re * re + im * im) / samples.len() as f64
}

#[test]
fn tremor_amplitude_shows_in_spectrum() {
    let base = UserSignature {
        press_force: 2.0,
        press_variance: 0.05,
        tremor_freq: 9.0,
        tremor_amp: 0.0,
        speed_scale: 1.0,
        noise_std: 0.002,
        stiffness: 1.0,
    };
    let shaky = UserSignature {
        tremor_amp: 0.3,
        ..base.clone()
    };
    let cfg = SynthConfig {
        num_users: 2,
        tasks: vec!["a".into()],
        trials_per_task: 10,
        users: Some(vec![base, shaky]),
        ..SynthConfig::default()
    };
    let data = synth_dataset(&cfg).unwrap();
    let mean_power = |user: &str| {
        let traces: Vec<_> = data.traces().iter().filter(|t| t.key().user == user).collect();
        traces
            .iter()
            .map(|t| {
                let fz: Vec<f32> = t.samples().iter().map(|s| s.fz).collect();
                power_at(&fz, 250.0, 9.0)
            })
            .sum::<f64>()
            / traces.len() as f64
    };
    let (calm, tremor) = (mean_power("u01"), mean_power("u02"));
    assert!(tremor > 20.0 * calm, "calm {calm}, tremor {tremor}");
}

#[test]
fn signatures_differ_between_users() {
    let cfg = SynthConfig {
        num_users: 5,
        ..SynthConfig::default()
    };
    let sigs = cfg.signatures().unwrap();
    for i in 0..sigs.len() {
        for j in i + 1..sigs.len() {
            assert_ne!(sigs[i].press_force, sigs[j].press_force);
            assert_ne!(sigs[i].tremor_freq, sigs[j].tremor_freq);
        }
    }
    assert!(synth_dataset(&SynthConfig {
        num_users: 1,
        ..SynthConfig::default()
    })
    .is_err());
}
