fn main() {
    // HDES_THREADS caps the worker pool used for restarts and residual
    // evaluation; results do not depend on the worker count.
    if let Ok(threads) = std::env::var("HDES_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    std::process::exit(hdes::cli::run());
}
