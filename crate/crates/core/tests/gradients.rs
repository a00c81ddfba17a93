//! Central finite differences against every backward kernel.

mod common;

use common::*;

const INSTANCES: u64 = 20;

fn assert_close(what: &str, worst: f64) {
    assert!(worst <= GRAD_REL_TOL, "{what}: relative error {worst:e}");
}

#[test]
fn conv2d() {
    assert_close("conv2d", grad_conv(INSTANCES));
}

#[test]
fn maxpool() {
    assert_close("maxpool", grad_maxpool(INSTANCES));
}

#[test]
fn relu_and_tanh() {
    assert_close("relu", grad_relu(INSTANCES));
    assert_close("tanh", grad_tanh(INSTANCES));
}

#[test]
fn fully_connected() {
    assert_close("fc", grad_fc(INSTANCES));
}

#[test]
fn recurrent_step_and_average() {
    assert_close("rnn step", grad_rnn_step(INSTANCES));
    assert_close("rnn average", grad_rnn_average(INSTANCES));
}

#[test]
fn softmax_cross_entropy() {
    assert_close("xent", grad_softmax_xent(INSTANCES));
}

#[test]
fn whole_networks() {
    assert_close("networks", grad_networks(INSTANCES));
}
