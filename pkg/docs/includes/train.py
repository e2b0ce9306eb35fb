from mono_kan import DatasetSpec, TrainConfig, certify, evaluate, init_model, load, train

spec = DatasetSpec.bundled("auto-mpg", "data")
splits = load(spec)
config = TrainConfig(max_epochs=300, hidden=[4], knots=8)

model = init_model(
    [splits.train.features.shape[1], *config.hidden, 1],
    splits.spec,
    config.knots,
    config.seed,
    input_scaler=splits.scaler,
    output_scaler=splits.target_scaler,
)
model, log = train(
    model,
    splits.train.transform(splits.scaler),
    config,
    splits.val.transform(splits.scaler),
)

print(evaluate(model, splits.test))
print(certify(model).verdict)
