/** Thin client over the /v1 session API plus the event stream. */
export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
    }
}
async function expectOk(resp) {
    if (!resp.ok) {
        let detail = resp.statusText;
        try {
            const body = await resp.json();
            if (body && typeof body.error === "string")
                detail = body.error;
        }
        catch {
            // keep statusText
        }
        throw new ApiError(resp.status, detail);
    }
    return resp;
}
export class StudioClient {
    constructor(base = "") {
        this.base = base;
    }
    async createSession(png) {
        const resp = await expectOk(await fetch(`${this.base}/v1/sessions`, { method: "POST", body: png }));
        return (await resp.json()).id;
    }
    async setEdit(sid, doc) {
        const resp = await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/edit`, {
            method: "PUT",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(doc),
        }));
        return (await resp.json()).edit;
    }
    async prepare(sid) {
        const resp = await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/prepare`, { method: "POST" }));
        return (await resp.json());
    }
    async run(sid) {
        await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/run`, { method: "POST" }));
    }
    async cancel(sid) {
        await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/cancel`, { method: "POST" }));
    }
    async getSession(sid) {
        const resp = await expectOk(await fetch(`${this.base}/v1/sessions/${sid}`));
        return (await resp.json());
    }
    async getResult(sid) {
        const resp = await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/result`));
        return (await resp.json());
    }
    /** One event-stream subscription per open session view. */
    subscribe(sid, onEvent, onError = () => { }) {
        const source = new EventSource(`${this.base}/v1/sessions/${sid}/events`);
        const handler = (msg) => onEvent(JSON.parse(msg.data));
        source.addEventListener("step", handler);
        source.addEventListener("terminal", (msg) => {
            handler(msg);
            source.close();
        });
        source.onerror = onError;
        return () => source.close();
    }
}
