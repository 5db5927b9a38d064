import click


@click.group()
def main():
    """Train and serve the personalization guidance service."""


@main.command("train")
@click.option("--job", "job_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
def cmd_train(job_path, out_dir, seed):
    """Run both personalization steps from a job file, save the checkpoint."""
    from .jobs import load_job
    from .personalize import personalize_reference, personalize_scene
    from .state import ModelState

    job = load_job(job_path)
    state = ModelState(seed=seed)

    def progress(step, loss):
        click.echo(f"  step {step}: loss {loss:.4f}")

    click.echo(f"scene personalization: {job.hyperparameters['scene_steps']} steps")
    personalize_scene(state, job, seed=seed, progress=progress)
    click.echo(f"reference personalization: {job.hyperparameters['reference_steps']} steps")
    personalize_reference(state, job, seed=seed, progress=progress)
    state.save(out_dir)
    click.echo(f"checkpoint written to {out_dir}")


@main.command("serve")
@click.option("--checkpoint", "ckpt_dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--seed", type=int, default=0)
def cmd_serve(ckpt_dir, host, port, seed):
    """Serve POST /v1/guidance from a trained checkpoint."""
    import uvicorn

    from .server import create_app
    from .state import ModelState

    state = ModelState.load(ckpt_dir)
    app = create_app(state, seed=seed)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
