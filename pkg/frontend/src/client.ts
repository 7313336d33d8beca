/** Thin client over the /v1 session API plus the event stream. */

import type { EditDocument, RunEvent, SessionRecord } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectOk(resp: Response): Promise<Response> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.error === "string") detail = body.error;
    } catch {
      // keep statusText
    }
    throw new ApiError(resp.status, detail);
  }
  return resp;
}

export class StudioClient {
  constructor(private base: string = "") {}

  async createSession(png: Blob): Promise<string> {
    const resp = await expectOk(
      await fetch(`${this.base}/v1/sessions`, { method: "POST", body: png })
    );
    return (await resp.json()).id as string;
  }

  async setEdit(sid: string, doc: EditDocument): Promise<EditDocument> {
    const resp = await expectOk(
      await fetch(`${this.base}/v1/sessions/${sid}/edit`, {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(doc),
      })
    );
    return (await resp.json()).edit as EditDocument;
  }

  async prepare(sid: string): Promise<SessionRecord> {
    const resp = await expectOk(
      await fetch(`${this.base}/v1/sessions/${sid}/prepare`, { method: "POST" })
    );
    return (await resp.json()) as SessionRecord;
  }

  async run(sid: string): Promise<void> {
    await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/run`, { method: "POST" }));
  }

  async cancel(sid: string): Promise<void> {
    await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/cancel`, { method: "POST" }));
  }

  async getSession(sid: string): Promise<SessionRecord> {
    const resp = await expectOk(await fetch(`${this.base}/v1/sessions/${sid}`));
    return (await resp.json()) as SessionRecord;
  }

  async getResult(sid: string): Promise<SessionRecord> {
    const resp = await expectOk(await fetch(`${this.base}/v1/sessions/${sid}/result`));
    return (await resp.json()) as SessionRecord;
  }

  /** One event-stream subscription per open session view. */
  subscribe(
    sid: string,
    onEvent: (event: RunEvent) => void,
    onError: (err: Event) => void = () => {}
  ): () => void {
    const source = new EventSource(`${this.base}/v1/sessions/${sid}/events`);
    const handler = (msg: MessageEvent) => onEvent(JSON.parse(msg.data) as RunEvent);
    source.addEventListener("step", handler);
    source.addEventListener("terminal", (msg: MessageEvent) => {
      handler(msg);
      source.close();
    });
    source.onerror = onError;
    return () => source.close();
  }
}
