use std::io::Write;
use std::path::{Path, PathBuf};

use featviz::attribution::{attribute, cam, AttributionConfig};
use featviz::heatmap::Heatmap;
use featviz::network::softmax;
use featviz::occlusion::{occlusion_map, OcclusionConfig};
use featviz::reconstruction::{reconstruct, Objective, OptConfig, RegConfig};
use featviz::tensor::write_fvt;
use featviz::viz::{render, render_heatmap, write_image, RenderSpec};
use featviz::{forward, Layer, Tensor};
use serde_json::json;

use crate::args::{AttributeArgs, CamArgs, ForwardArgs, InspectArgs, OccludeArgs, ReconstructArgs};
use crate::manifest::Manifest;
use crate::{absolute, load_input, load_model, write_file, CliError};

fn topk_rows(logits: &Tensor, k: usize) -> Vec<(usize, f32, f32)> {
    let probs = softmax(logits);
    let mut order: Vec<usize> = (0..logits.len()).collect();
    // Stable sort keeps lower class indices first on equal scores.
    order.sort_by(|&a, &b| logits.data()[b].total_cmp(&logits.data()[a]));
    order
        .into_iter()
        .take(k)
        .map(|c| (c, logits.data()[c], probs.data()[c]))
        .collect()
}

pub fn forward_cmd(args: ForwardArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = load_model(&args.model)?;
    let x = load_input(&args.image)?;
    let tape = forward(&net, &x)?;
    let logits = tape.logits().batch_row(0);
    writeln!(out, "rank  class  score        prob      label").map_err(CliError::stdout)?;
    for (rank, (class, score, prob)) in topk_rows(&logits, args.topk).into_iter().enumerate() {
        let label = net.label(class).unwrap_or("-");
        writeln!(
            out,
            "{:<4}  {class:<5}  {score:<11.6}  {prob:<8.6}  {label}",
            rank + 1
        )
        .map_err(CliError::stdout)?;
    }
    Ok(())
}

fn write_rendered(
    manifest: &mut Manifest,
    out: &Path,
    raw: Option<&Path>,
    image: &featviz::viz::RgbImage,
    values: &Tensor,
) -> Result<(), CliError> {
    write_file(out, &write_image(image))?;
    manifest.outputs.push(out.to_path_buf());
    if let Some(raw) = raw {
        write_file(raw, &write_fvt(values)?)?;
        manifest.outputs.push(raw.to_path_buf());
    }
    manifest.write_sidecars()
}

fn heatmap_result(map: &Heatmap, spec: &RenderSpec) -> serde_json::Value {
    let mut meta = map.metadata();
    meta["argmax"] = json!(map.argmax());
    meta["render"] = json!(spec);
    meta
}

pub fn attribute_cmd(mut args: AttributeArgs) -> Result<(), CliError> {
    resolve(&mut [&mut args.model, &mut args.image, &mut args.out])?;
    resolve_opt(&mut args.raw)?;
    let net = load_model(&args.model)?;
    let x = load_input(&args.image)?;
    let config = AttributionConfig::new(
        args.relu_rule.into(),
        args.conv_rule(),
        args.target.target(),
    );
    let map = attribute(&net, &x, config)?;
    let spec = args.render.spec();
    let image = render(&map.values, &spec)?;

    let mut manifest = Manifest::new("attribute", &args);
    manifest.inputs = vec![args.model.clone(), args.image.clone()];
    let mut result = map.metadata();
    result["relevance_sum"] = json!(map.values.sum());
    result["render"] = json!(spec);
    manifest.result = result;
    write_rendered(
        &mut manifest,
        &args.out,
        args.raw.as_deref(),
        &image,
        &map.values,
    )
}

pub fn occlude_cmd(mut args: OccludeArgs) -> Result<(), CliError> {
    resolve(&mut [&mut args.model, &mut args.image, &mut args.out])?;
    resolve_opt(&mut args.raw)?;
    let net = load_model(&args.model)?;
    let x = load_input(&args.image)?;
    let config = OcclusionConfig::new(
        (args.box_size.0, args.box_size.1),
        (args.stride.0, args.stride.1),
        args.fill.fill(),
        args.target.target(),
    )
    .with_workers(args.workers);
    let map = occlusion_map(&net, &x, &config)?;
    let spec = args.render.spec();
    let image = render_heatmap(&map, &spec)?;

    let mut manifest = Manifest::new("occlude", &args);
    manifest.seed = args.fill.seed();
    manifest.inputs = vec![args.model.clone(), args.image.clone()];
    manifest.result = heatmap_result(&map, &spec);
    write_rendered(
        &mut manifest,
        &args.out,
        args.raw.as_deref(),
        &image,
        &map.to_tensor(),
    )
}

pub fn cam_cmd(mut args: CamArgs) -> Result<(), CliError> {
    resolve(&mut [&mut args.model, &mut args.image, &mut args.out])?;
    resolve_opt(&mut args.raw)?;
    let net = load_model(&args.model)?;
    let x = load_input(&args.image)?;
    let map = cam(&net, &x, args.class)?;
    let spec = args.render.spec();
    let image = render_heatmap(&map, &spec)?;

    let mut manifest = Manifest::new("cam", &args);
    manifest.inputs = vec![args.model.clone(), args.image.clone()];
    manifest.result = heatmap_result(&map, &spec);
    write_rendered(
        &mut manifest,
        &args.out,
        args.raw.as_deref(),
        &image,
        &map.to_tensor(),
    )
}

pub fn reconstruct_cmd(mut args: ReconstructArgs) -> Result<(), CliError> {
    resolve(&mut [&mut args.model, &mut args.out_dir])?;
    resolve_opt(&mut args.reference)?;
    let net = load_model(&args.model)?;
    let objective = match (args.maximize_class, args.invert_layer, &args.reference) {
        (Some(class), _, _) => Objective::MaximizeUnit {
            target: featviz::attribution::TargetSpec::class(class),
        },
        (None, Some(layer_index), Some(path)) => {
            let loaded = load_input(path)?;
            // An image of the network's input shape is run forward first.
            let is_image = loaded.shape() == net.input_shape()
                && layer_index < net.layers().len()
                && net.layer_output_shape(layer_index) != loaded.shape();
            let reference = if is_image {
                forward(&net, &loaded)?.output(layer_index).clone()
            } else {
                loaded
            };
            Objective::MatchRepresentation {
                layer_index,
                reference,
            }
        }
        _ => {
            return Err(CliError::Usage(
                "reconstruct needs --maximize-class or --invert-layer with --reference".into(),
            ))
        }
    };
    let reg = RegConfig {
        lambda_p: args.lambda_p,
        p: args.p,
        lambda_tv: args.lambda_tv,
    };
    let mut opt = OptConfig::new(args.steps, args.lr, args.init.init());
    opt.record_every = args.record_every;
    let run = reconstruct(&net, &objective, &reg, &opt)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let mut manifest = Manifest::new("reconstruct", &args);
    manifest.seed = match args.init {
        crate::args::InitArg::Rand(seed) => Some(seed),
        crate::args::InitArg::Zeros => None,
    };
    manifest.inputs = std::iter::once(args.model.clone())
        .chain(args.reference.clone())
        .collect();
    let mut snapshots = Vec::new();
    for snap in &run.trajectory {
        let path = args.out_dir.join(format!("step_{:06}.fvt", snap.step));
        write_file(&path, &write_fvt(&snap.input)?)?;
        snapshots.push(json!({ "step": snap.step, "file": path }));
        manifest.outputs.push(path);
    }
    let final_path = args.out_dir.join("final.fvt");
    write_file(&final_path, &write_fvt(&run.final_input)?)?;
    manifest.outputs.push(final_path);
    manifest.result = json!({
        "regularizers": reg,
        "snapshots": snapshots,
        "loss_history": run.history,
        "final_objective": run.history.last(),
    });
    write_file(&args.out_dir.join("manifest.json"), &manifest.to_bytes())
}

fn describe(layer: &Layer) -> String {
    match layer {
        Layer::Conv(c) => {
            let k = c.kernel().shape();
            format!(
                "conv {}->{} {}x{} stride {}x{} pad {}x{}",
                k.c, k.n, k.h, k.w, c.stride.0, c.stride.1, c.pad.0, c.pad.1
            )
        }
        Layer::LeakyRelu { alpha } => format!("leaky_relu alpha {alpha}"),
        Layer::MaxPool { window, stride } | Layer::AvgPool { window, stride } => format!(
            "{} {}x{} stride {}x{}",
            layer.kind(),
            window.0,
            window.1,
            stride.0,
            stride.1
        ),
        Layer::Dense(d) => format!("dense {}->{}", d.inputs(), d.outputs()),
        other => other.kind().to_string(),
    }
}

pub fn inspect_cmd(args: InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = load_model(&args.model)?;
    let (c, h, w) = net.input_dims();
    let mut text = format!("input  {c}x{h}x{w}\n");
    text += &format!(
        "{:<3}  {:<36}  {:<12}  {:>8}\n",
        "#", "layer", "output", "params"
    );
    for (i, layer) in net.layers().iter().enumerate() {
        let s = net.layer_output_shape(i);
        text += &format!(
            "{i:<3}  {:<36}  {:<12}  {:>8}\n",
            describe(layer),
            format!("{}x{}x{}", s.c, s.h, s.w),
            layer.param_count()
        );
    }
    text += &format!("total parameters: {}\n", net.param_count());
    if let Some(labels) = net.labels() {
        text += &format!("labels: {}\n", labels.join(", "));
    }
    out.write_all(text.as_bytes()).map_err(CliError::stdout)
}

fn resolve(paths: &mut [&mut PathBuf]) -> Result<(), CliError> {
    for p in paths.iter_mut() {
        **p = absolute(p)?;
    }
    Ok(())
}

fn resolve_opt(path: &mut Option<PathBuf>) -> Result<(), CliError> {
    if let Some(p) = path {
        *p = absolute(p)?;
    }
    Ok(())
}
