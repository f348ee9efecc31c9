use super::{Graph, NnError, ParamStore, Var};

/// Compares reverse-mode gradients of a scalar loss against central
/// differences with step `h`. Returns the worst per-parameter relative
/// error `max|a − n| / max(max|a|, max|n|)`.
pub fn check_gradients<F>(store: &ParamStore, f: F, h: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    let analytic = g.param_grads();
    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let l = f(&mut g, s)?;
        Ok(g.value(l).item())
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (name, grad) in &analytic {
        let mut max_diff = 0.0f64;
        let mut max_a = 0.0f64;
        let mut max_n = 0.0f64;
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.get(name).expect("graded params exist").data[i];
            probe.get_mut(name).expect("present").data[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("present").data[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("present").data[i] = orig;
            let n = (up - down) / (2.0 * h);
            max_diff = max_diff.max((a - n).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(n.abs());
        }
        worst = worst.max(max_diff / max_a.max(max_n).max(1e-12));
    }
    Ok(worst)
}
