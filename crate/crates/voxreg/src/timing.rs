//! Monotonic clock shim. `Instant` is unavailable on bare wasm targets, so
//! stage timings degrade to zero there; everything else keeps working.

#[cfg(not(target_arch = "wasm32"))]
mod imp {
    use std::time::Instant;

    #[derive(Clone, Copy)]
    pub struct Stopwatch(Instant);

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch(Instant::now())
        }

        pub fn elapsed_secs(&self) -> f64 {
            self.0.elapsed().as_secs_f64()
        }
    }
}

#[cfg(target_arch = "wasm32")]
mod imp {
    #[derive(Clone, Copy)]
    pub struct Stopwatch;

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch
        }

        pub fn elapsed_secs(&self) -> f64 {
            0.0
        }
    }
}

pub use imp::Stopwatch;
