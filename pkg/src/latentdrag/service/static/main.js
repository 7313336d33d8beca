import { Studio } from "./studio.js";
function el(id) {
    const node = document.getElementById(id);
    if (!node)
        throw new Error(`missing element #${id}`);
    return node;
}
new Studio({
    canvas: el("canvas"),
    lossChart: el("loss-chart"),
    mdChart: el("md-chart"),
    status: el("status"),
    preview: el("preview"),
    promptInitial: el("prompt-initial"),
    promptTarget: el("prompt-target"),
    lambdaClip: el("lambda-clip"),
    lambdaKl: el("lambda-kl"),
    maxSteps: el("max-steps"),
    pprOn: el("ppr-on"),
    rewardOn: el("reward-on"),
    dwptOn: el("dwpt-on"),
    fileInput: el("file-input"),
    toolButtons: {
        points: el("tool-points"),
        mask: el("tool-mask"),
        pan: el("tool-pan"),
    },
    runButton: el("run"),
    cancelButton: el("cancel"),
    clearButton: el("clear"),
});
