/** The studio: canvas annotation, run control, and the live run view. */
import { CanvasAnnotation } from "./annotations.js";
import { drawChart } from "./chart.js";
import { StudioClient, ApiError } from "./client.js";
import { emptyRunView, reduceEvent } from "./events.js";
import { identityTransform, imageToScreen, pan, pixelFromClick, zoomAt, } from "./transform.js";
const PAIR_COLORS = ["#ff5c5c", "#ffb84d", "#59d98c", "#5cc8ff", "#c08bff", "#ff8bd1"];
export class Studio {
    constructor(els, client = new StudioClient()) {
        this.annotation = null;
        this.image = null;
        this.imageBlob = null;
        this.view = identityTransform;
        this.runView = emptyRunView();
        this.sessionId = null;
        this.unsubscribe = null;
        this.dragging = null;
        this.panning = null;
        this.flash = null;
        this.els = els;
        this.client = client;
        this.wire();
        this.setStatus("load an image to start");
    }
    // -- wiring -------------------------------------------------------------
    wire() {
        const { canvas } = this.els;
        this.els.fileInput.addEventListener("change", () => this.onFile());
        canvas.addEventListener("mousedown", (e) => this.onDown(e));
        canvas.addEventListener("mousemove", (e) => this.onMove(e));
        canvas.addEventListener("mouseup", () => this.onUp());
        canvas.addEventListener("mouseleave", () => this.onUp());
        canvas.addEventListener("wheel", (e) => {
            e.preventDefault();
            const rect = canvas.getBoundingClientRect();
            this.view = zoomAt(this.view, e.clientX - rect.left, e.clientY - rect.top, e.deltaY < 0 ? 1.25 : 0.8);
            this.render();
        });
        canvas.addEventListener("contextmenu", (e) => {
            e.preventDefault();
            this.deleteNearestPair(e);
        });
        for (const [tool, button] of Object.entries(this.els.toolButtons)) {
            button.addEventListener("click", () => this.setTool(tool));
        }
        this.els.runButton.addEventListener("click", () => void this.launch());
        this.els.cancelButton.addEventListener("click", () => void this.cancelRun());
        this.els.clearButton.addEventListener("click", () => {
            if (this.annotation) {
                this.annotation.pairs = [];
                this.annotation.clearMask();
                this.render();
            }
        });
    }
    setTool(tool) {
        if (!this.annotation)
            return;
        this.annotation.activeTool = tool;
        for (const [name, button] of Object.entries(this.els.toolButtons)) {
            button.classList.toggle("active", name === tool);
        }
    }
    setStatus(text, isError = false) {
        this.els.status.textContent = text;
        this.els.status.classList.toggle("error", isError);
    }
    // -- image / annotation lifecycle -----------------------------------------
    onFile() {
        const file = this.els.fileInput.files?.[0];
        if (!file)
            return;
        this.imageBlob = file;
        const url = URL.createObjectURL(file);
        const img = new Image();
        img.onload = () => {
            this.image = img;
            this.annotation = new CanvasAnnotation(img.naturalHeight, img.naturalWidth);
            const fit = Math.min(this.els.canvas.width / img.naturalWidth, this.els.canvas.height / img.naturalHeight);
            this.view = { scale: fit, originX: 0, originY: 0 };
            this.runView = emptyRunView();
            this.sessionId = null;
            this.setTool("points");
            this.setStatus(`loaded ${img.naturalWidth}x${img.naturalHeight}; click handle then target`);
            this.render();
        };
        img.src = url;
    }
    canvasPoint(e) {
        const rect = this.els.canvas.getBoundingClientRect();
        return { x: e.clientX - rect.left, y: e.clientY - rect.top };
    }
    pixelAt(e) {
        if (!this.annotation)
            return null;
        const { x, y } = this.canvasPoint(e);
        return pixelFromClick(this.view, x, y, this.annotation.height, this.annotation.width);
    }
    onDown(e) {
        if (!this.annotation)
            return;
        const pixel = this.pixelAt(e);
        const tool = this.annotation.activeTool;
        if (tool === "pan" || e.button === 1) {
            this.panning = this.canvasPoint(e);
            return;
        }
        if (pixel === null) {
            const { x, y } = this.canvasPoint(e);
            this.flash = { x, y, until: performance.now() + 400 };
            this.setStatus("click inside the image", true);
            this.render();
            return;
        }
        if (tool === "points") {
            const hit = this.annotation.hitTest(pixel, 3 / this.view.scale + 1);
            if (hit && !this.annotation.pendingPair) {
                this.dragging = hit;
            }
            else {
                this.annotation.placePoint(pixel);
                this.setStatus(this.annotation.pendingPair ? "now click the target" : "pair placed");
            }
        }
        else if (tool === "mask") {
            this.annotation.paintMask(pixel, e.shiftKey);
        }
        this.render();
    }
    onMove(e) {
        if (!this.annotation)
            return;
        if (this.panning) {
            const p = this.canvasPoint(e);
            this.view = pan(this.view, p.x - this.panning.x, p.y - this.panning.y);
            this.panning = p;
            this.render();
            return;
        }
        const pixel = this.pixelAt(e);
        if (pixel === null)
            return;
        if (this.dragging) {
            this.annotation.movePoint(this.dragging, pixel);
            this.render();
        }
        else if (this.annotation.activeTool === "mask" && e.buttons === 1) {
            this.annotation.paintMask(pixel, e.shiftKey);
            this.render();
        }
    }
    onUp() {
        this.dragging = null;
        this.panning = null;
    }
    deleteNearestPair(e) {
        if (!this.annotation)
            return;
        const pixel = this.pixelAt(e);
        if (pixel === null)
            return;
        const hit = this.annotation.hitTest(pixel, 5 / this.view.scale + 2);
        if (hit) {
            this.annotation.deletePair(hit.pair);
            this.render();
        }
    }
    // -- run control ----------------------------------------------------------
    currentDocument() {
        if (!this.annotation)
            throw new Error("no image loaded");
        return this.annotation.serialize({
            initial: this.els.promptInitial.value,
            target: this.els.promptTarget.value,
        }, {
            lambda_clip: Number(this.els.lambdaClip.value),
            lambda_kl: Number(this.els.lambdaKl.value),
        }, {
            ppr_on: this.els.pprOn.checked,
            reward_on: this.els.rewardOn.checked,
            dwpt_on: this.els.dwptOn.checked,
        }, { max_steps: Number(this.els.maxSteps.value) });
    }
    async launch() {
        if (!this.annotation || !this.imageBlob) {
            this.setStatus("load an image first", true);
            return;
        }
        try {
            const doc = this.currentDocument();
            this.setStatus("uploading…");
            this.sessionId = await this.client.createSession(this.imageBlob);
            const echoed = await this.client.setEdit(this.sessionId, doc);
            if (JSON.stringify(echoed.points) !== JSON.stringify(doc.points)) {
                throw new Error("server echo does not match the drawn request");
            }
            this.setStatus("preparing (inversion + adapters)…");
            await this.client.prepare(this.sessionId);
            this.runView = emptyRunView();
            await this.client.run(this.sessionId);
            this.setStatus("running…");
            this.unsubscribe?.();
            this.unsubscribe = this.client.subscribe(this.sessionId, (event) => this.onRunEvent(event), () => this.setStatus("event stream lost", true));
        }
        catch (err) {
            const message = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
            this.setStatus(message, true);
        }
    }
    async cancelRun() {
        if (!this.sessionId)
            return;
        try {
            await this.client.cancel(this.sessionId);
            this.setStatus("cancelling…");
        }
        catch (err) {
            this.setStatus(String(err), true);
        }
    }
    onRunEvent(event) {
        this.runView = reduceEvent(this.runView, event);
        if (event.type === "step") {
            this.setStatus(`step ${event.step_index}: mean distance ${event.mean_distance.toFixed(2)} px`);
            if (event.preview)
                this.els.preview.src = event.preview;
        }
        else {
            const md = this.runView.metrics?.mean_distance;
            this.setStatus(event.state === "failed"
                ? `failed: ${event.error}`
                : `${event.state}; final mean distance ${md?.toFixed(2)} px`, event.state === "failed");
            if (this.sessionId && event.state !== "failed") {
                this.els.preview.src = `/v1/sessions/${this.sessionId}/files/result.png`;
            }
        }
        this.render();
    }
    // -- rendering --------------------------------------------------------------
    render() {
        const ctx = this.els.canvas.getContext("2d");
        if (!ctx || !this.annotation)
            return;
        const { width, height } = this.els.canvas;
        ctx.clearRect(0, 0, width, height);
        ctx.fillStyle = "#101018";
        ctx.fillRect(0, 0, width, height);
        ctx.imageSmoothingEnabled = this.view.scale < 4;
        if (this.image) {
            ctx.drawImage(this.image, this.view.originX, this.view.originY, this.image.naturalWidth * this.view.scale, this.image.naturalHeight * this.view.scale);
        }
        this.renderMask(ctx);
        this.renderTrails(ctx);
        this.renderPairs(ctx);
        if (this.flash && performance.now() < this.flash.until) {
            ctx.strokeStyle = "#ff5c5c";
            ctx.beginPath();
            ctx.arc(this.flash.x, this.flash.y, 10, 0, Math.PI * 2);
            ctx.stroke();
        }
        drawChart(this.els.lossChart, [
            { label: "motion", color: "#5cc8ff", values: this.runView.msSeries },
            { label: "prior KL", color: "#ffb84d", values: this.runView.klSeries },
            { label: "reward", color: "#ff8bd1", values: this.runView.rewardSeries },
        ], { logScale: true });
        drawChart(this.els.mdChart, [
            { label: "mean distance (px)", color: "#59d98c", values: this.runView.mdSeries },
        ]);
    }
    renderMask(ctx) {
        const a = this.annotation;
        if (!a.maskPainted)
            return;
        ctx.save();
        ctx.fillStyle = "rgba(92, 200, 255, 0.25)";
        for (let r = 0; r < a.height; r++) {
            for (let c = 0; c < a.width; c++) {
                if (!a.mask[r * a.width + c])
                    continue;
                const p = imageToScreen(this.view, r, c);
                ctx.fillRect(p.x, p.y, this.view.scale, this.view.scale);
            }
        }
        ctx.restore();
    }
    renderPairs(ctx) {
        const a = this.annotation;
        a.pairs.forEach((pair, i) => {
            const color = PAIR_COLORS[i % PAIR_COLORS.length];
            const h = imageToScreen(this.view, pair.handle[0] + 0.5, pair.handle[1] + 0.5);
            ctx.fillStyle = color;
            ctx.beginPath();
            ctx.arc(h.x, h.y, 5, 0, Math.PI * 2);
            ctx.fill();
            ctx.fillStyle = "#fff";
            ctx.font = "10px system-ui, sans-serif";
            ctx.fillText(String(i + 1), h.x + 6, h.y - 6);
            if (pair.target) {
                const t = imageToScreen(this.view, pair.target[0] + 0.5, pair.target[1] + 0.5);
                ctx.strokeStyle = color;
                ctx.lineWidth = 1.5;
                ctx.beginPath();
                ctx.moveTo(h.x, h.y);
                ctx.lineTo(t.x, t.y);
                ctx.stroke();
                ctx.strokeRect(t.x - 4, t.y - 4, 8, 8);
            }
        });
    }
    renderTrails(ctx) {
        this.runView.handleTrails.forEach((trail, i) => {
            if (trail.length < 2)
                return;
            ctx.strokeStyle = PAIR_COLORS[i % PAIR_COLORS.length];
            ctx.globalAlpha = 0.6;
            ctx.lineWidth = 1;
            ctx.beginPath();
            trail.forEach((p, k) => {
                const s = imageToScreen(this.view, p[0] + 0.5, p[1] + 0.5);
                if (k === 0)
                    ctx.moveTo(s.x, s.y);
                else
                    ctx.lineTo(s.x, s.y);
            });
            ctx.stroke();
            ctx.globalAlpha = 1;
        });
    }
}
