//! Copy and mixture distributions over the extended vocabulary.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `P^c(y) = sum of alpha_l over positions l whose extended id is y`.
pub fn copy_distribution<T: Scalar>(alpha: &[T], context_ids: &[u32], ext_size: usize) -> Result<Vec<T>> {
    if alpha.len() != context_ids.len() {
        return Err(Error::shape(
            "copy_distribution",
            format!("{} weights for {} positions", alpha.len(), context_ids.len()),
        ));
    }
    let mut pc = vec![T::zero(); ext_size];
    for (&a, &id) in alpha.iter().zip(context_ids) {
        let slot = pc.get_mut(id as usize).ok_or(Error::IdOutOfRange { id, size: ext_size })?;
        *slot += a;
    }
    Ok(pc)
}

/// `lambda * pv + (1 - lambda) * pc`.
pub fn mix<T: Scalar>(pv: &[T], pc: &[T], lambda: T) -> Result<Vec<T>> {
    if pv.len() != pc.len() {
        return Err(Error::shape("mixture", format!("{} vs {}", pv.len(), pc.len())));
    }
    let rest = T::one() - lambda;
    Ok(pv.iter().zip(pc).map(|(&v, &c)| lambda * v + rest * c).collect())
}
