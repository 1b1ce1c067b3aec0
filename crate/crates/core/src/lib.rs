pub mod environment;
pub mod harness;
pub mod hypernet;
pub mod numerics;
pub mod policy;
pub mod seeding;
pub mod temporal;
pub mod warmstart;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/time-periods.md")]
    mod time_periods {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/hypernetwork.md")]
    mod hypernetwork {}
    #[doc = include_str!("../../../book/src/warm-start.md")]
    mod warm_start {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
