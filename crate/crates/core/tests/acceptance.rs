//! One test per acceptance criterion. Each prints a PASS/FAIL line.

use std::io::Write;

use backlog_core::validation::{run_criterion, Corruption, ValidationSettings};

fn report(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn criterion(id: u8) {
    let outcome = run_criterion(id, &ValidationSettings::default());
    report(&outcome.line());
    assert!(outcome.passed, "{}", outcome.line());
}

#[test]
fn criterion_1_axioms() {
    criterion(1);
}

#[test]
fn criterion_2_queueing_oracles() {
    criterion(2);
}

#[test]
fn criterion_3_split_linearity() {
    criterion(3);
}

#[test]
fn criterion_4_unconditional_expectations() {
    criterion(4);
}

#[test]
fn criterion_5_conditional_expectations() {
    criterion(5);
}

#[test]
fn criterion_6_backlog_diagnostics() {
    criterion(6);
}

#[test]
fn criterion_7_approximator() {
    criterion(7);
}

#[test]
fn criterion_8_unconditional_optima() {
    criterion(8);
}

#[test]
fn criterion_9_conditional_optima() {
    criterion(9);
}

#[test]
fn corrupted_processing_fails_axioms() {
    let settings = ValidationSettings {
        corruption: Corruption::ProcessingStep,
        ..ValidationSettings::default()
    };
    let outcome = run_criterion(1, &settings);
    report(&format!("negative control: {}", outcome.line()));
    assert!(!outcome.passed);
}
