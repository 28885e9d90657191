use super::config::{ExperimentConfig, PlannerKind};

pub const PRESET_NAMES: [&str; 5] = ["default", "hetero10", "hetero10-dynamic", "homogeneous", "converge"];

/// Built-in experiment configurations, resolved and validated.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    match name {
        "default" => {}
        "hetero10" => {
            // Static devices: one compute mode, no jitter, fixed bandwidth
            // falling from 30 to 3 Mb/s as base compute slows 1x to 10x.
            hetero10_devices(&mut c);
            c.sim.jitter = 0.0;
            c.devices.modes = vec![1.0];
        }
        "hetero10-dynamic" => {
            hetero10_devices(&mut c);
        }
        "homogeneous" => {
            c.devices.count = Some(10);
            c.devices.mu_spread = 1.0;
            c.devices.modes = vec![1.0];
            c.devices.bandwidth_mbps = [10.0, 10.0];
            c.sim.jitter = 0.0;
        }
        "converge" => {
            c.model.layers = 6;
            c.model.width = 16;
            c.model.classes = 2;
            c.lora.psi = 48;
            c.run.rounds = 50;
            c.devices.count = Some(10);
        }
        _ => return None,
    }
    c.run.planner = PlannerKind::Legend;
    let mut resolved = c.resolve().expect("presets are valid");
    if name == "hetero10" {
        let n = resolved.devices.profile.len();
        for (i, p) in resolved.devices.profile.iter_mut().enumerate() {
            let bw = 30.0 - 27.0 * i as f64 / (n - 1) as f64;
            p.bandwidth_mbps = [bw, bw];
        }
    }
    Some(resolved)
}

fn hetero10_devices(c: &mut ExperimentConfig) {
    c.devices.count = Some(10);
    c.devices.mu_min = 1.0;
    c.devices.mu_spread = 10.0;
}
