from ._bikt import (
    ConfigError,
    TrainingError,
    binarize_and_merge,
    build_weight_map,
    command_names,
    count_metrics,
    density_count,
    det_to_reg,
    dms_ssim_loss,
    focal_mse_loss,
    fuse_density,
    generate_scene,
    load_config,
    localization_map,
    match_points,
    mse_loss,
    nms,
    phi_total_loss,
    points_to_localization,
    run_command,
    sigmoid,
)

__all__ = [name for name in dir() if not name.startswith("_")]
