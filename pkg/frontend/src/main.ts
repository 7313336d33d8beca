import { Studio } from "./studio.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

new Studio({
  canvas: el<HTMLCanvasElement>("canvas"),
  lossChart: el<HTMLCanvasElement>("loss-chart"),
  mdChart: el<HTMLCanvasElement>("md-chart"),
  status: el("status"),
  preview: el<HTMLImageElement>("preview"),
  promptInitial: el<HTMLInputElement>("prompt-initial"),
  promptTarget: el<HTMLInputElement>("prompt-target"),
  lambdaClip: el<HTMLInputElement>("lambda-clip"),
  lambdaKl: el<HTMLInputElement>("lambda-kl"),
  maxSteps: el<HTMLInputElement>("max-steps"),
  pprOn: el<HTMLInputElement>("ppr-on"),
  rewardOn: el<HTMLInputElement>("reward-on"),
  dwptOn: el<HTMLInputElement>("dwpt-on"),
  fileInput: el<HTMLInputElement>("file-input"),
  toolButtons: {
    points: el<HTMLButtonElement>("tool-points"),
    mask: el<HTMLButtonElement>("tool-mask"),
    pan: el<HTMLButtonElement>("tool-pan"),
  },
  runButton: el<HTMLButtonElement>("run"),
  cancelButton: el<HTMLButtonElement>("cancel"),
  clearButton: el<HTMLButtonElement>("clear"),
});
