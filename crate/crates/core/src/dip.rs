//! Encoder–decoder network with skip connections and its latent input.
//!
//! The layout follows the usual deep-image-prior "skip" hourglass. Each scale
//! `i` has
//!
//! ```text
//!   skip:   conv1x1(in -> skip[i]) , BN , LReLU
//!   deeper: conv3x3/2(in -> down[i]) , BN , LReLU , conv3x3(down[i]) , BN , LReLU
//!           [ scale i+1 ] , upsample x2
//!   merge:  concat(skip, deeper) , BN ,
//!           conv3x3(-> up[i]) , BN , LReLU , conv1x1(up[i]) , BN , LReLU
//! ```
//!
//! followed by a 1×1 convolution to the output channels and a sigmoid.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Channels of the latent input (D).
    pub input_depth: usize,
    pub channels_down: Vec<usize>,
    pub channels_up: Vec<usize>,
    pub channels_skip: Vec<usize>,
    pub kernel_down: usize,
    pub kernel_up: usize,
    pub kernel_skip: usize,
    pub output_channels: usize,
    pub leaky_slope: f64,
    /// Std of the gaussian perturbation added to the latent every iteration.
    pub perturb_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_depth: 32,
            channels_down: alloc::vec![16, 32, 64],
            channels_up: alloc::vec![16, 32, 64],
            channels_skip: alloc::vec![4, 4, 4],
            kernel_down: 3,
            kernel_up: 3,
            kernel_skip: 1,
            output_channels: 3,
            leaky_slope: 0.2,
            perturb_std: 1.0 / 30.0,
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("{key}: `{s}` is not a non-negative integer")))
        })
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl NetworkConfig {
    /// Number of down/up scale pairs.
    pub fn depth(&self) -> usize {
        self.channels_down.len()
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.depth();
        if d == 0 {
            return Err(Error::config("network depth must be >= 1"));
        }
        if self.channels_up.len() != d || self.channels_skip.len() != d {
            return Err(Error::config(format!(
                "channel lists must have equal length (down {}, up {}, skip {})",
                d,
                self.channels_up.len(),
                self.channels_skip.len()
            )));
        }
        if self.channels_down.iter().chain(&self.channels_up).any(|&c| c == 0) {
            return Err(Error::config("down/up channel counts must be positive"));
        }
        for (name, k) in [
            ("kernel_down", self.kernel_down),
            ("kernel_up", self.kernel_up),
            ("kernel_skip", self.kernel_skip),
        ] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if !matches!(self.output_channels, 1 | 3) {
            return Err(Error::config(format!(
                "output_channels must be 1 or 3, got {}",
                self.output_channels
            )));
        }
        if self.input_depth == 0 {
            return Err(Error::config("input_depth must be positive"));
        }
        if !(self.perturb_std >= 0.0) || !(self.leaky_slope >= 0.0) {
            return Err(Error::config("perturb_std and leaky_slope must be >= 0"));
        }
        Ok(())
    }

    /// Checks that an `height × width` input keeps its size through the network.
    pub fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        let m = self.spatial_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::config(format!(
                "a depth-{} network requires height and width divisible by {m}, got {height}x{width}",
                self.depth()
            )));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_kv_string(&self) -> String {
        format!(
            "input_depth={}\nchannels_down={}\nchannels_up={}\nchannels_skip={}\n\
             kernel_down={}\nkernel_up={}\nkernel_skip={}\noutput_channels={}\n\
             leaky_slope={}\nperturb_std={}\n",
            self.input_depth,
            join(&self.channels_down),
            join(&self.channels_up),
            join(&self.channels_skip),
            self.kernel_down,
            self.kernel_up,
            self.kernel_skip,
            self.output_channels,
            self.leaky_slope,
            self.perturb_std
        )
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are an error.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::config(format!("line {}: {k}: bad integer `{v}`", lineno + 1)))
            };
            let float = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::config(format!("line {}: {k}: bad number `{v}`", lineno + 1)))
            };
            match k {
                "input_depth" => cfg.input_depth = int(v)?,
                "channels_down" => cfg.channels_down = parse_list(k, v)?,
                "channels_up" => cfg.channels_up = parse_list(k, v)?,
                "channels_skip" => cfg.channels_skip = parse_list(k, v)?,
                "kernel_down" => cfg.kernel_down = int(v)?,
                "kernel_up" => cfg.kernel_up = int(v)?,
                "kernel_skip" => cfg.kernel_skip = int(v)?,
                "output_channels" => cfg.output_channels = int(v)?,
                "leaky_slope" => cfg.leaky_slope = float(v)?,
                "perturb_std" => cfg.perturb_std = float(v)?,
                _ => {
                    return Err(Error::config(format!(
                        "line {}: unknown network key `{k}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    weight: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct Scale {
    skip: Option<ConvBn>,
    down: ConvBn,
    down_refine: ConvBn,
    merge_gamma: ParamId,
    merge_beta: ParamId,
    up: ConvBn,
    up_refine: ConvBn,
}

/// The network `f_θ` together with its parameters θ.
#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    pub params: ParamSet<T>,
    scales: Vec<Scale>,
    head_weight: ParamId,
    head_bias: ParamId,
}

struct Builder<'a, T> {
    params: ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    /// Uniform(±1/√fan_in) init for weight and bias.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> (ParamId, ParamId) {
        let bound = 1.0 / num_traits::Float::sqrt((cin * k * k) as f64);
        let mut draw = |n: usize| -> alloc::vec::Vec<T> {
            (0..n)
                .map(|_| T::from_f64_lossy(self.rng.gen_range(-bound..bound)))
                .collect()
        };
        let w = Tensor::from_vec([cout, cin, k, k], draw(cout * cin * k * k)).unwrap();
        let b = Tensor::from_vec([1, cout, 1, 1], draw(cout)).unwrap();
        (
            self.params.add(format!("{name}.weight"), w),
            self.params.add(format!("{name}.bias"), b),
        )
    }

    fn bn(&mut self, name: &str, c: usize) -> (ParamId, ParamId) {
        (
            self.params.add(format!("{name}.gamma"), Tensor::full([1, c, 1, 1], T::one())),
            self.params.add(format!("{name}.beta"), Tensor::zeros([1, c, 1, 1])),
        )
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvBn {
        let (weight, bias) = self.conv(name, cin, cout, k);
        let (gamma, beta) = self.bn(&format!("{name}.bn"), cout);
        ConvBn {
            weight,
            bias,
            gamma,
            beta,
            stride,
            padding: (k - 1) / 2,
        }
    }
}

/// Builds the network with parameters drawn from `seed`.
pub fn build_network<T: Real>(config: &NetworkConfig, seed: u64) -> Result<Network<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        params: ParamSet::new(),
        rng: &mut rng,
    };
    let depth = config.depth();
    let mut scales = Vec::with_capacity(depth);
    let mut cin = config.input_depth;
    for i in 0..depth {
        let down_c = config.channels_down[i];
        let up_c = config.channels_up[i];
        let skip_c = config.channels_skip[i];
        let skip = (skip_c > 0)
            .then(|| b.conv_bn(&format!("s{i}.skip"), cin, skip_c, config.kernel_skip, 1));
        let down = b.conv_bn(&format!("s{i}.down"), cin, down_c, config.kernel_down, 2);
        let down_refine = b.conv_bn(&format!("s{i}.down_refine"), down_c, down_c, config.kernel_down, 1);
        let deeper_c = if i + 1 < depth {
            config.channels_up[i + 1]
        } else {
            down_c
        };
        let (merge_gamma, merge_beta) = b.bn(&format!("s{i}.merge"), skip_c + deeper_c);
        let up = b.conv_bn(&format!("s{i}.up"), skip_c + deeper_c, up_c, config.kernel_up, 1);
        let up_refine = b.conv_bn(&format!("s{i}.up_refine"), up_c, up_c, 1, 1);
        scales.push(Scale {
            skip,
            down,
            down_refine,
            merge_gamma,
            merge_beta,
            up,
            up_refine,
        });
        cin = down_c;
    }
    let (head_weight, head_bias) = b.conv("head", config.channels_up[0], config.output_channels, 1);
    Ok(Network {
        config: config.clone(),
        params: b.params,
        scales,
        head_weight,
        head_bias,
    })
}

impl<T: Real> Network<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn conv_bn(&self, tape: &mut Tape<T>, x: Var, l: &ConvBn) -> Result<Var> {
        let w = tape.param(&self.params, l.weight);
        let b = tape.param(&self.params, l.bias);
        let y = tape.conv2d(x, w, b, l.stride, l.padding)?;
        let g = tape.param(&self.params, l.gamma);
        let be = tape.param(&self.params, l.beta);
        let y = tape.batch_norm(y, g, be)?;
        Ok(tape.leaky_relu(y, self.config.leaky_slope))
    }

    fn scale_forward(&self, tape: &mut Tape<T>, x: Var, i: usize) -> Result<Var> {
        let s = &self.scales[i];
        let skip = s.skip.as_ref().map(|l| self.conv_bn(tape, x, l)).transpose()?;
        let mut deeper = self.conv_bn(tape, x, &s.down)?;
        deeper = self.conv_bn(tape, deeper, &s.down_refine)?;
        if i + 1 < self.scales.len() {
            deeper = self.scale_forward(tape, deeper, i + 1)?;
        }
        deeper = tape.upsample_nearest(deeper, 2)?;
        let merged = match skip {
            Some(sk) => tape.concat(&[sk, deeper])?,
            None => deeper,
        };
        let g = tape.param(&self.params, s.merge_gamma);
        let b = tape.param(&self.params, s.merge_beta);
        let merged = tape.batch_norm(merged, g, b)?;
        let up = self.conv_bn(tape, merged, &s.up)?;
        self.conv_bn(tape, up, &s.up_refine)
    }

    /// Records `f_θ(z)` on `tape`. `z` is `[1, D, H, W]`; the output is
    /// `[1, C_out, H, W]` with values in (0, 1).
    pub fn forward(&self, tape: &mut Tape<T>, z: Tensor<T>) -> Result<Var> {
        let [_, d, h, w] = z.shape();
        if d != self.config.input_depth {
            return Err(Error::config(format!(
                "network expects {} latent channels, got {d}",
                self.config.input_depth
            )));
        }
        self.config.check_spatial(h, w)?;
        let x = tape.constant(z);
        let y = self.scale_forward(tape, x, 0)?;
        let hw = tape.param(&self.params, self.head_weight);
        let hb = tape.param(&self.params, self.head_bias);
        let y = tape.conv2d(y, hw, hb, 1, 0)?;
        Ok(tape.sigmoid(y))
    }
}

/// The fixed network input `z` and the std of its per-iteration perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentInput<T> {
    base: Tensor<T>,
    pub perturb_std: f64,
}

/// Draws `z ~ U[0, 1]` of shape `[1, depth, height, width]`.
pub fn sample_latent<T: Real>(depth: usize, height: usize, width: usize, seed: u64) -> Result<LatentInput<T>> {
    if depth == 0 || height == 0 || width == 0 {
        return Err(Error::config(format!(
            "latent dimensions must be positive, got {depth}x{height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..depth * height * width)
        .map(|_| T::from_f64_lossy(rng.gen::<f64>()))
        .collect();
    Ok(LatentInput {
        base: Tensor::from_vec([1, depth, height, width], data)?,
        perturb_std: 1.0 / 30.0,
    })
}

impl<T: Real> LatentInput<T> {
    pub fn with_perturbation(mut self, std: f64) -> Self {
        self.perturb_std = std;
        self
    }

    pub fn base(&self) -> &Tensor<T> {
        &self.base
    }

    /// `z + N(0, perturb_std²)`; the stored base is left untouched.
    pub fn perturbed<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor<T> {
        let mut z = self.base.clone();
        if self.perturb_std > 0.0 {
            let std = self.perturb_std;
            for v in z.data_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v += T::from_f64_lossy(std * n);
            }
        }
        z
    }
}

pub fn perturb_latent<T: Real, R: Rng + ?Sized>(latent: &LatentInput<T>, rng: &mut R) -> Tensor<T> {
    latent.perturbed(rng)
}
