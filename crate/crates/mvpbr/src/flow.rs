//! Flow matching on patch latents: `x_t = (1 - t) x0 + t x1`, velocity
//! target `x1 - x0`, deterministic Euler sampling from noise.

use lumitex_geometry::Image;
use lumitex_tensor::{Graph, SplitMix64, Tensor, Var};

use crate::error::{MvpbrError, Result};
use crate::net::{BranchKind, Condition, Model, ShadedContext};
use crate::tokens::latent_to_images;

/// Floor on `1 - t` when turning a clean-latent prediction into a velocity.
pub const T_EPS: f64 = 0.5;

/// One draw of the noise endpoint and the interpolation time.
#[derive(Clone, Debug)]
pub struct FlowDraw {
    pub t: f64,
    pub x0: Tensor,
}

impl FlowDraw {
    pub fn sample(rng: &mut SplitMix64, shape: &[usize]) -> Self {
        let t = rng.uniform();
        let x0 = Tensor::randn(shape.to_vec(), rng);
        Self { t, x0 }
    }

    pub fn interpolate(&self, x1: &Tensor) -> Tensor {
        let t = self.t;
        Tensor::from_fn(x1.shape().to_vec(), |i| (1.0 - t) * self.x0.data()[i] + t * x1.data()[i])
    }
}

/// `mean ||model(x_t, t) - (x1 - x0)||^2`. `model` receives `x_t` as a graph
/// input and returns the predicted velocity.
pub fn flow_match_loss<F>(g: &mut Graph, x1: &Tensor, draw: &FlowDraw, model: F) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var, f64) -> Result<Var>,
{
    if draw.x0.shape() != x1.shape() {
        return Err(MvpbrError::Contract(format!(
            "noise {:?} and target {:?} differ in shape",
            draw.x0.shape(),
            x1.shape()
        )));
    }
    let xt = g.input(draw.interpolate(x1));
    let v = model(g, xt, draw.t)?;
    let target = Tensor::from_fn(x1.shape().to_vec(), |i| x1.data()[i] - draw.x0.data()[i]);
    Ok(g.mse(v, &target)?)
}

/// Velocity implied by a clean-latent prediction: `(x1_hat - x_t) / (1 - t)`.
pub fn velocity_from_x1(g: &mut Graph, x1_hat: Var, x_t: Var, t: f64) -> Result<Var> {
    let diff = g.sub(x1_hat, x_t)?;
    Ok(g.scale(diff, 1.0 / (1.0 - t).max(T_EPS)))
}

/// Integrate `dx/dt = v(x, t)` from `t = 0` to `1` in `steps` uniform Euler
/// steps.
pub fn euler<F>(x0: Tensor, steps: usize, mut v: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(MvpbrError::Contract("sampling needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for s in 0..steps {
        let vel = v(&x, s as f64 * dt)?;
        for (a, b) in x.data_mut().iter_mut().zip(vel.data()) {
            *a += dt * b;
        }
    }
    Ok(x)
}

impl Model {
    /// Velocity of one branch as a graph value.
    pub fn velocity(&self, g: &mut Graph, kind: BranchKind, x_t: Var, t: f64, cond: &Condition, ctx: Option<&ShadedContext>) -> Result<Var> {
        let out = self.forward(g, kind, x_t, t, cond, ctx)?;
        velocity_from_x1(g, out.x1, x_t, t)
    }

    /// Flow-matching loss of `kind` against clean latents `x1`.
    pub fn branch_loss(
        &self,
        g: &mut Graph,
        kind: BranchKind,
        x1: &Tensor,
        draw: &FlowDraw,
        cond: &Condition,
        ctx: Option<&ShadedContext>,
    ) -> Result<Var> {
        flow_match_loss(g, x1, draw, |g, xt, t| self.velocity(g, kind, xt, t, cond, ctx))
    }

    /// Shaded context as plain tensors, computed once per scene.
    pub fn context_values(&self, shaded: &Tensor, cond: &Condition) -> Result<ContextValues> {
        let mut g = Graph::new();
        let ctx = self.shaded_context(&mut g, shaded, cond)?;
        Ok(ContextValues {
            k: g.value(ctx.k).clone(),
            v: g.value(ctx.v).clone(),
            provenance: ctx.provenance,
        })
    }

    /// Euler-integrate one branch from seeded noise, returning raw latents.
    /// Material branches need the shaded context.
    pub fn sample_latent(&self, kind: BranchKind, cond: &Condition, ctx: Option<&ContextValues>, steps: usize, seed: u64) -> Result<Tensor> {
        if kind != BranchKind::Shaded && ctx.is_none() {
            return Err(MvpbrError::Contract(format!("sampling {} needs the shaded context", kind.name())));
        }
        let rows = self.cfg.views * self.cfg.tokens_per_view();
        let cols = self.cfg.patch_dim(self.cfg.channels);
        let x0 = Tensor::randn([rows, cols], &mut SplitMix64::new(seed));
        euler(x0, steps, |x, t| {
            let mut g = Graph::new();
            let ctx = ctx.filter(|_| kind != BranchKind::Shaded).map(|c| c.to_graph(&mut g));
            let xv = g.input(x.clone());
            let v = self.velocity(&mut g, kind, xv, t, cond, ctx.as_ref())?;
            Ok(g.value(v).clone())
        })
    }

    /// Shaded views first, then albedo and mr guided by the sampled shaded
    /// latents.
    pub fn generate(&self, cond: &Condition, steps: usize, seed: u64) -> Result<Generated> {
        let mut rng = SplitMix64::new(seed);
        let shaded = self.sample_latent(BranchKind::Shaded, cond, None, steps, rng.next_u64())?;
        let ctx = self.context_values(&shaded, cond)?;
        let albedo = self.sample_latent(BranchKind::Albedo, cond, Some(&ctx), steps, rng.next_u64())?;
        let mr = self.sample_latent(BranchKind::Mr, cond, Some(&ctx), steps, rng.next_u64())?;
        Ok(Generated {
            shaded: latent_to_images(&shaded, &self.cfg)?,
            albedo: latent_to_images(&albedo, &self.cfg)?,
            mr: latent_to_images(&mr, &self.cfg)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ContextValues {
    pub k: Tensor,
    pub v: Tensor,
    pub provenance: String,
}

impl ContextValues {
    pub fn to_graph(&self, g: &mut Graph) -> ShadedContext {
        ShadedContext {
            k: g.input(self.k.clone()),
            v: g.input(self.v.clone()),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub shaded: Vec<Image>,
    pub albedo: Vec<Image>,
    /// Metallic, roughness and a zero channel.
    pub mr: Vec<Image>,
}
