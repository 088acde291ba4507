/** Wire types and transports for the annotation service. */

export interface OpenResponse {
  session_id: string;
  width: number;
  height: number;
}

export interface ClickResponse {
  mask_rle: number[];
  latency_ms: number;
  click_count: number;
  cold?: boolean;
}

export interface Transport {
  open(imageId: string): Promise<OpenResponse>;
  click(msg: {
    session_id: string;
    x: number;
    y: number;
    positive: boolean;
    token?: string;
  }): Promise<ClickResponse>;
  undo(sessionId: string): Promise<ClickResponse>;
  close(sessionId: string): Promise<void>;
}

async function postJson<T>(url: string, body: unknown): Promise<T> {
  const r = await fetch(url, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!r.ok) {
    let detail = `${r.status}`;
    try {
      detail = JSON.stringify(await r.json());
    } catch {
      /* keep status */
    }
    throw new Error(`${url} failed: ${detail}`);
  }
  return (await r.json()) as T;
}

/** One-shot HTTP endpoints; same payloads as the WebSocket channel. */
export class HttpTransport implements Transport {
  constructor(private base = "") {}

  open(imageId: string): Promise<OpenResponse> {
    return postJson(`${this.base}/open`, { image_id: imageId });
  }

  click(msg: {
    session_id: string;
    x: number;
    y: number;
    positive: boolean;
    token?: string;
  }): Promise<ClickResponse> {
    return postJson(`${this.base}/click`, msg);
  }

  undo(sessionId: string): Promise<ClickResponse> {
    return postJson(`${this.base}/undo`, { session_id: sessionId });
  }

  async close(sessionId: string): Promise<void> {
    await postJson(`${this.base}/close`, { session_id: sessionId });
  }
}
