macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }

        #[test]
        fn $name() {
            $name::run_example().expect("example should run");
        }
    };
}

example!(gpd_tail);
example!(quantile_forest);
example!(boosting);
example!(extreme_pipeline);
example!(cross_validation);
example!(diagnostics);
example!(simulation);
