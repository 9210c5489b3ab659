use crate::error::{Error, Result};
use crate::netforge::ModelInput;
use crate::pixelops::Plane;

/// Anything that maps an input to a malignant-class probability.
pub trait Scorer {
    fn malignant_prob(&self, input: &ModelInput) -> Result<f64>;
}

impl<F> Scorer for F
where
    F: Fn(&ModelInput) -> Result<f64>,
{
    fn malignant_prob(&self, input: &ModelInput) -> Result<f64> {
        self(input)
    }
}

/// Mean malignant probability over a fixed list of test-time views. Pairs get
/// the same transform index on both images.
pub fn tta_score<S, V>(scorer: &S, input: &ModelInput, views_fn: V) -> Result<f64>
where
    S: Scorer + ?Sized,
    V: Fn(&Plane) -> Vec<Plane>,
{
    let inputs: Vec<ModelInput> = match input {
        ModelInput::Single(p) => views_fn(p).into_iter().map(ModelInput::Single).collect(),
        ModelInput::Pair { cc, mlo } => {
            let (a, b) = (views_fn(cc), views_fn(mlo));
            if a.len() != b.len() {
                return Err(Error::invalid("view functions returned unequal view counts"));
            }
            a.into_iter().zip(b).map(|(cc, mlo)| ModelInput::Pair { cc, mlo }).collect()
        }
    };
    if inputs.is_empty() {
        return Err(Error::invalid("test-time view list is empty"));
    }
    let mut sum = 0.0;
    for i in &inputs {
        sum += scorer.malignant_prob(i)?;
    }
    Ok(sum / inputs.len() as f64)
}

pub fn ensemble_score<S: Scorer>(models: &[S], input: &ModelInput) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::invalid("ensemble has no models"));
    }
    let mut sum = 0.0;
    for m in models {
        sum += m.malignant_prob(input)?;
    }
    Ok(sum / models.len() as f64)
}
