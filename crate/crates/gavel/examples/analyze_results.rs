//! Analysis primitives: option-selection bias, the RMS bias scalar, and
//! power-law learning-curve fits with the coefficient of determination.
//!
//! ```bash
//! cargo run -p gavel --example analyze_results
//! ```

use gavel::analyze::{
    fit_power_law, option_bias, r_squared, rms_bias, rms_bias_conventional, LearningCurvePoint,
};
use gavel::grade::GradedAnswer;
use gavel::parse::ParseStatus;
use gavel::Label;

fn graded(predicted: Option<Label>, gold: Label) -> GradedAnswer {
    GradedAnswer {
        question_id: String::new(),
        correct: predicted == Some(gold),
        status: ParseStatus {
            malformed_label: predicted.is_none(),
            malformed_explanation: false,
        },
        predicted,
        gold,
    }
}

fn main() -> anyhow::Result<()> {
    // a model that over-selects C: gold uniform, predictions skewed
    let mut pool = Vec::new();
    for i in 0..200usize {
        let gold = Label::ALL[i % 4];
        let predicted = if i % 10 < 4 {
            Some(Label::C)
        } else if i % 10 == 9 {
            None
        } else {
            Some(gold)
        };
        pool.push(graded(predicted, gold));
    }
    let bias = option_bias(&pool)?;
    println!("per-option bias (predicted freq - gold freq, answered set only):");
    for label in Label::ALL {
        println!("  {label}: {:+.4}", bias.get(label));
    }
    println!("components sum to {:.2e}", bias.bias.iter().sum::<f64>());
    println!("rms bias            = {:.5}", rms_bias(&bias));
    println!(
        "rms bias (inside-root convention) = {:.5}",
        rms_bias_conventional(&bias)
    );

    // learning curve: mean accuracy per train sample size, fitted as a*x^b
    let curve = [
        (1usize, 0.219),
        (10, 0.317),
        (20, 0.341),
        (75, 0.359),
        (125, 0.355),
        (225, 0.368),
    ];
    let points: Vec<LearningCurvePoint> = curve
        .iter()
        .map(|&(sample_size, accuracy)| LearningCurvePoint {
            sample_size,
            accuracy,
        })
        .collect();
    let fit = fit_power_law(&points)?;
    println!("\npower-law fit over {} points:", points.len());
    println!("  accuracy ~= {:.4} * n^{:.4}", fit.a, fit.b);
    println!("  R^2 (original space) = {:.4}", fit.r_squared);

    let observed: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    let predicted: Vec<f64> = points
        .iter()
        .map(|p| fit.a * (p.sample_size as f64).powf(fit.b))
        .collect();
    println!(
        "  r_squared recomputed  = {:.4}",
        r_squared(&observed, &predicted)?
    );
    Ok(())
}
