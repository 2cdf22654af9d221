use crate::autodiff::Var;
use crate::error::Result;

/// Unweighted cycle terms and their ρ-weighted sum.
pub struct CycleTerms<'t> {
    pub pk: Var<'t>,
    pub signal: Var<'t>,
    pub cp: Var<'t>,
    pub total: Var<'t>,
}

#[allow(clippy::too_many_arguments)]
pub fn cycle_terms<'t>(
    p: Var<'t>,
    p_cycled: Var<'t>,
    s: Var<'t>,
    s_cycled: Var<'t>,
    cp: Var<'t>,
    cp_cycled: Var<'t>,
    rho: f64,
) -> Result<CycleTerms<'t>> {
    let pk = p.l1(p_cycled)?;
    let signal = s.l1(s_cycled)?;
    let plasma = cp.l1(cp_cycled)?;
    let total = pk.add(signal)?.add(plasma.scale(rho)?)?;
    Ok(CycleTerms { pk, signal, cp: plasma, total })
}

/// mean|P − P''| + mean|S − S''| + ρ·mean|Cp − Cp''|.
#[allow(clippy::too_many_arguments)]
pub fn cycle_loss<'t>(
    p: Var<'t>,
    p_cycled: Var<'t>,
    s: Var<'t>,
    s_cycled: Var<'t>,
    cp: Var<'t>,
    cp_cycled: Var<'t>,
    rho: f64,
) -> Result<Var<'t>> {
    Ok(cycle_terms(p, p_cycled, s, s_cycled, cp, cp_cycled, rho)?.total)
}

/// ½·mean((x − target)²).
fn half_mse_to<'t>(x: Var<'t>, target: f64) -> Result<Var<'t>> {
    x.add_scalar(-target)?.square()?.mean()?.scale(0.5)
}

/// Least-squares generator term: ½·mean((D(fake) − 1)²).
pub fn lsgan_generator_loss(d_fake: Var<'_>) -> Result<Var<'_>> {
    half_mse_to(d_fake, 1.0)
}

/// Least-squares discriminator term: ½·mean((D(real) − 1)²) + ½·mean(D(fake)²).
pub fn lsgan_discriminator_loss<'t>(d_real: Var<'t>, d_fake: Var<'t>) -> Result<Var<'t>> {
    half_mse_to(d_real, 1.0)?.add(half_mse_to(d_fake, 0.0)?)
}

pub struct LsganLosses<'t> {
    pub disc_loss: Var<'t>,
    pub gen_loss: Var<'t>,
}

pub fn lsgan_losses<'t>(d_real: Var<'t>, d_fake: Var<'t>) -> Result<LsganLosses<'t>> {
    Ok(LsganLosses { disc_loss: lsgan_discriminator_loss(d_real, d_fake)?, gen_loss: lsgan_generator_loss(d_fake)? })
}

/// α·mean|pred − label|.
pub fn supervised_loss<'t>(pred: Var<'t>, label: Var<'t>, alpha: f64) -> Result<Var<'t>> {
    pred.l1(label)?.scale(alpha)
}

/// β·mean|S − S_reconstructed|.
pub fn physics_loss<'t>(s: Var<'t>, s_reconstructed: Var<'t>, beta: f64) -> Result<Var<'t>> {
    s.l1(s_reconstructed)?.scale(beta)
}
