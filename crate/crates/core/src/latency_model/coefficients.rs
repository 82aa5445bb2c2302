use crate::error::ModelError;
use crate::profiles::{Backend, DeviceProfile, FlopsTable, ModelProfile};

/// Per-layer CPU cost, GPU-minus-CPU cost and per-window overhead of a device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub xi: f64,
}

/// `Σ_q ops_q / speed_q` over quant formats the model actually uses.
pub(crate) fn compute_time(
    ops: &FlopsTable,
    speed: &FlopsTable,
    device: &str,
    backend: &'static str,
) -> Result<f64, ModelError> {
    let mut t = 0.0;
    for (q, &f) in ops {
        if f == 0.0 {
            continue;
        }
        match speed.get(q) {
            Some(&s) => t += f / s,
            None => {
                return Err(ModelError::MissingThroughput {
                    device: device.to_string(),
                    backend,
                    quant: q.to_string(),
                })
            }
        }
    }
    Ok(t)
}

pub(crate) fn cpu_layer_time(d: &DeviceProfile, m: &ModelProfile, bprime: f64) -> Result<f64, ModelError> {
    Ok(compute_time(&m.layer_flops, &d.cpu_flops, &d.id, "cpu")?
        + d.kv_copy_cpu
        + bprime / d.mem_throughput_cpu)
}

pub(crate) fn gpu_layer_time(d: &DeviceProfile, m: &ModelProfile, bprime: f64) -> Result<f64, ModelError> {
    let backend = match d.backend {
        Backend::Cuda => "cuda",
        Backend::Metal => "metal",
        Backend::None => return Ok(0.0),
    };
    Ok(compute_time(&m.layer_flops, &d.gpu_flops, &d.id, backend)?
        + d.kv_copy_gpu.unwrap_or(0.0)
        + bprime / d.mem_throughput_gpu.unwrap_or(f64::INFINITY))
}

/// Output-layer work on the head: CPU compute plus reading the lookup row
/// and the output weights from memory.
pub(crate) fn head_output_time(d: &DeviceProfile, m: &ModelProfile) -> Result<f64, ModelError> {
    Ok(compute_time(&m.output_flops, &d.cpu_flops, &d.id, "cpu")?
        + (m.input_row_bytes() + m.output_bytes as f64) / d.mem_throughput_cpu)
}

/// α, β and ξ for one device, using the model's configured KV length.
pub fn device_coefficients(d: &DeviceProfile, m: &ModelProfile) -> Result<DeviceCoefficients, ModelError> {
    let bprime = m.layer_bytes_with_kv() as f64;
    let alpha = cpu_layer_time(d, m, bprime)?;
    let beta = if d.has_gpu() {
        gpu_layer_time(d, m, bprime)? - alpha
    } else {
        0.0
    };
    Ok(DeviceCoefficients {
        alpha,
        beta,
        xi: d.device_copy() + d.comm_latency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::fixtures::*;
    use crate::profiles::QuantFormat;

    fn model_with_bprime() -> ModelProfile {
        let mut m = model(10);
        m.kv_tokens = 0;
        m.layer_bytes = 100_000_000;
        m
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn alpha_direct_arithmetic() {
        let c = device_coefficients(&linux_cpu("a", GIB), &model_with_bprime()).unwrap();
        assert!(close(c.alpha, 0.0201), "{}", c.alpha);
        assert_eq!(c.beta, 0.0);
    }

    #[test]
    fn beta_direct_arithmetic() {
        let c = device_coefficients(&linux_cuda("g", GIB, GIB), &model_with_bprime()).unwrap();
        assert!(close(c.beta, -0.01809), "{}", c.beta);
        assert!(close(c.xi, 0.003 + 2e-4));
    }

    #[test]
    fn uma_has_no_copy_term() {
        let mut d = mac_metal("m", GIB);
        d.comm_latency = 0.003;
        let c = device_coefficients(&d, &model_with_bprime()).unwrap();
        assert_eq!(c.xi, 0.003);
    }

    #[test]
    fn missing_quant_is_named() {
        let mut m = model_with_bprime();
        m.layer_flops.insert(QuantFormat::Q6k, 5e8);
        let err = device_coefficients(&linux_cpu("a", GIB), &m).unwrap_err();
        assert_eq!(
            err,
            ModelError::MissingThroughput {
                device: "a".into(),
                backend: "cpu",
                quant: "q6k".into()
            }
        );
    }

    #[test]
    fn zero_flops_quant_needs_no_throughput() {
        let mut m = model_with_bprime();
        m.layer_flops.insert(QuantFormat::Fp32, 0.0);
        assert!(device_coefficients(&linux_cpu("a", GIB), &m).is_ok());
    }
}
