//! WebAssembly bindings behind `www/index.html`. Each export wraps a plain
//! Rust function so the logic is testable off the browser.

use fovlab::factors::{joint_table, render, CorrelationSpec, FactorConfig, FactorSpace, RenderConfig, Sigma};
use fovlab::theory::{gap_row, GaussianWorld};
use wasm_bindgen::prelude::*;

/// The correlated pair shown by the demo: size and horizontal position.
const PAIR: (usize, usize) = (0, 1);

pub fn joint_probs(sigma: &str) -> Result<Vec<f64>, String> {
    let sigma: Sigma = sigma.parse().map_err(|e| format!("{e}"))?;
    let space = FactorSpace::default_world();
    joint_table(&space, &CorrelationSpec::new(PAIR, sigma)).map(|t| t.probs).map_err(|e| e.to_string())
}

/// Renders one configuration as RGBA bytes, grey levels replicated into the
/// colour channels.
pub fn sprite_rgba(config: &[u32]) -> Result<Vec<u8>, String> {
    let config = FactorConfig(config.iter().map(|&v| v as usize).collect());
    let obs = render(&FactorSpace::default_world(), &config, &RenderConfig::default()).map_err(|e| e.to_string())?;
    Ok(obs
        .pixels
        .iter()
        .flat_map(|&p| {
            let g = (p.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect())
}

/// `[best diagonal-map KL, closed form, whitening-map KL]` at one ρ.
pub fn gap(rho: f64) -> Result<Vec<f64>, String> {
    let row = gap_row(&GaussianWorld::new(rho).map_err(|e| e.to_string())?);
    Ok(vec![row.min_diagonal_kl, row.analytic, row.whitening_kl])
}

#[wasm_bindgen]
pub fn cardinalities() -> Vec<u32> {
    FactorSpace::default_world().cardinalities().into_iter().map(|c| c as u32).collect()
}

#[wasm_bindgen]
pub fn factor_names() -> Vec<String> {
    FactorSpace::default_world().names().into_iter().map(String::from).collect()
}

#[wasm_bindgen]
pub fn sprite_side() -> u32 {
    RenderConfig::default().width as u32
}

#[wasm_bindgen(js_name = jointTable)]
pub fn joint_table_js(sigma: &str) -> Result<Vec<f64>, JsError> {
    joint_probs(sigma).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = renderSprite)]
pub fn render_sprite_js(config: Vec<u32>) -> Result<Vec<u8>, JsError> {
    sprite_rgba(&config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = likelihoodGap)]
pub fn likelihood_gap_js(rho: f64) -> Result<Vec<f64>, JsError> {
    gap(rho).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_a_distribution_and_tightens() {
        let tight = joint_probs("0.2").unwrap();
        assert_eq!(tight.len(), 64);
        assert!((tight.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let flat = joint_probs("inf").unwrap();
        assert!(flat.iter().all(|p| (p - 1.0 / 64.0).abs() < 1e-15));
        let diag = |t: &[f64]| (0..8).map(|i| t[i * 9]).sum::<f64>();
        assert!(diag(&tight) > diag(&flat));
        assert!(joint_probs("-1").is_err());
    }

    #[test]
    fn sprite_is_rgba() {
        let px = sprite_rgba(&[7, 0, 0, 3, 0]).unwrap();
        let side = sprite_side() as usize;
        assert_eq!(px.len(), side * side * 4);
        assert!(px.chunks(4).all(|c| c[0] == c[1] && c[1] == c[2] && c[3] == 255));
        assert!(sprite_rgba(&[8, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn gap_matches_closed_form() {
        let g = gap(0.8).unwrap();
        // -0.5 ln(1 - 0.64)
        assert!((g[0] - 0.510_825_6).abs() < 1e-6);
        assert!((g[0] - g[1]).abs() < 1e-6 && g[2] < 1e-10);
        assert!(gap(1.0).is_err());
    }
}
