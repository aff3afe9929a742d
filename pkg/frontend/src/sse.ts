/**
 * Minimal server-sent-events reader for POSTed chat streams.
 *
 * EventSource can't send a POST body, so the chat stream is consumed from a
 * fetch ReadableStream instead. Yields the payload of every `data:` line,
 * frame by frame, including the terminal "[DONE]" marker.
 */
export async function* sseData(
  stream: ReadableStream<Uint8Array>,
): AsyncGenerator<string, void, undefined> {
  const reader = stream.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let boundary: number;
      while ((boundary = buffer.indexOf("\n\n")) >= 0) {
        const frame = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        for (const line of frame.split("\n")) {
          if (line.startsWith("data:")) {
            yield line.slice("data:".length).trim();
          }
        }
      }
    }
    // a final frame without trailing blank line still counts
    for (const line of buffer.split("\n")) {
      if (line.startsWith("data:")) {
        yield line.slice("data:".length).trim();
      }
    }
  } finally {
    reader.releaseLock();
  }
}
